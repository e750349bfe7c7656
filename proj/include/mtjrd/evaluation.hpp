#ifndef MTJRD_EVALUATION_HPP
#define MTJRD_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtjrd/codec.hpp"
#include "mtjrd/core.hpp"
#include "mtjrd/metrics.hpp"

namespace mtjrd::evaluation {

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace detail {

inline double similarity_or_zero(const TaskResponse& ref, const TaskResponse& pred,
                                 std::span<const double> k) {
  try {
    return metrics::task_similarity(ref.output(), pred.output(), k).value();
  } catch (const UndefinedSimilarity&) {
    return 0.0;
  }
}

/// 101-point interpolated AP from a ranked list of true/false positive flags.
inline double interpolated_ap(const std::vector<bool>& tp, std::size_t num_refs) {
  std::vector<double> precision, recall;
  std::size_t ctp = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) ++ctp;
    precision.push_back(static_cast<double>(ctp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(ctp) / static_cast<double>(num_refs));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

}  // namespace detail

/// Single-class AP averaged over similarity thresholds. Predictions are ranked by
/// descending confidence (stable); each prediction takes the most similar unmatched
/// reference at or above the threshold.
inline double average_precision(const std::vector<TaskResponse>& predictions,
                                const std::vector<TaskResponse>& references,
                                const std::vector<double>& thresholds = coco_thresholds(),
                                std::span<const double> k = metrics::kCocoKeypointConstants) {
  if (references.empty()) throw InvalidArgument("average_precision: no references");
  if (thresholds.empty()) throw InvalidArgument("average_precision: no thresholds");
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].confidence() > predictions[b].confidence();
  });
  std::vector<std::vector<double>> sim(order.size(), std::vector<double>(references.size()));
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < references.size(); ++j)
      sim[i][j] = detail::similarity_or_zero(references[j], predictions[order[i]], k);

  double total = 0;
  for (double t : thresholds) {
    std::vector<bool> used(references.size(), false), tp(order.size(), false);
    for (std::size_t i = 0; i < order.size(); ++i) {
      int best = -1;
      double best_s = t;
      for (std::size_t j = 0; j < references.size(); ++j)
        if (!used[j] && sim[i][j] >= best_s && (best < 0 || sim[i][j] > best_s)) {
          best = static_cast<int>(j);
          best_s = sim[i][j];
        }
      if (best >= 0) {
        used[static_cast<std::size_t>(best)] = true;
        tp[i] = true;
      }
    }
    total += detail::interpolated_ap(tp, references.size());
  }
  return total / static_cast<double>(thresholds.size());
}

// ---------------------------------------------------------------------------
// Rate-accuracy curves
// ---------------------------------------------------------------------------

struct RatePoint {
  double bpp = 0;
  double accuracy = 0;  // [0,1]
};

struct RateAccuracyCurve {
  std::string label;
  Task task = Task::OD;
  std::vector<RatePoint> points;

  /// Sorts by bpp and checks the curve is usable.
  void normalize() {
    std::sort(points.begin(), points.end(), [](const RatePoint& a, const RatePoint& b) { return a.bpp < b.bpp; });
    if (points.size() < 4) throw InvalidArgument("RateAccuracyCurve: at least 4 points required");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!(points[i].bpp > 0) || !std::isfinite(points[i].bpp))
        throw InvalidArgument("RateAccuracyCurve: bpp must be positive");
      if (!(points[i].accuracy >= 0 && points[i].accuracy <= 1))
        throw InvalidArgument("RateAccuracyCurve: accuracy must lie in [0,1]");
      if (i > 0 && points[i].bpp - points[i - 1].bpp <= 1e-9)
        throw InvalidArgument("RateAccuracyCurve: duplicate bpp (degenerate curve)");
    }
  }
};

struct LadderPoint {
  codec::Bitstream stream;
  int width = 0, height = 0;
  std::vector<TaskResponse> responses;
  std::vector<TaskResponse> references;
};

inline RateAccuracyCurve rate_accuracy_curve(const std::vector<LadderPoint>& ladder, std::string label, Task task,
                                             const std::vector<double>& thresholds = coco_thresholds()) {
  RateAccuracyCurve c{std::move(label), task, {}};
  for (const auto& p : ladder)
    c.points.push_back({codec::measure_rate(p.stream, p.width, p.height),
                        average_precision(p.responses, p.references, thresholds)});
  c.normalize();
  return c;
}

// ---------------------------------------------------------------------------
// Bjontegaard delta
// ---------------------------------------------------------------------------

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw InvalidArgument("Pchip: need at least two points");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw InvalidArgument("Pchip: abscissae must be strictly increasing");
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    d_.assign(n, 0.0);
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      if (delta[k - 1] * delta[k] <= 0) continue;
      const double w1 = 2 * h[k] + h[k - 1], w2 = h[k] + 2 * h[k - 1];
      d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
    d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  double operator()(double x) const {
    const std::size_t i = segment(x);
    const double h = x_[i + 1] - x_[i], t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
           (t3 - t2) * h * d_[i + 1];
  }

  /// Exact integral over [a, b] within the data range (2-point Gauss per piece).
  double integrate(double a, double b) const {
    if (a < x_.front() || b > x_.back() || a > b) throw InvalidArgument("Pchip: integration range outside data");
    static const double g = 1.0 / std::sqrt(3.0);
    double sum = 0;
    for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
      const double lo = std::max(a, x_[i]), hi = std::min(b, x_[i + 1]);
      if (hi <= lo) continue;
      const double m = 0.5 * (lo + hi), r = 0.5 * (hi - lo);
      sum += r * (eval_in(i, m - r * g) + eval_in(i, m + r * g));
    }
    return sum;
  }

  const std::vector<double>& slopes() const noexcept { return d_; }

 private:
  static double end_slope(double h0, double h1, double d0, double d1) {
    double d = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (d * d0 <= 0)
      d = 0;
    else if (d0 * d1 <= 0 && std::abs(d) > std::abs(3 * d0))
      d = 3 * d0;
    return d;
  }
  std::size_t segment(double x) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - x_.begin()));
    return std::min(i, x_.size() - 1) - 1;
  }
  double eval_in(std::size_t i, double x) const {
    const double h = x_[i + 1] - x_[i], t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * d_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
           (t3 - t2) * h * d_[i + 1];
  }

  std::vector<double> x_, y_, d_;
};

namespace detail {

inline std::pair<std::vector<double>, std::vector<double>> log_rate_percent(const RateAccuracyCurve& c) {
  RateAccuracyCurve s = c;
  s.normalize();
  std::vector<double> x, y;
  for (const auto& p : s.points) {
    x.push_back(std::log(p.bpp));
    y.push_back(100.0 * p.accuracy);
  }
  return {x, y};
}

}  // namespace detail

/// Mean accuracy difference (percent points) of test over reference across the
/// overlapping log-bpp interval.
inline double bd_metric(const RateAccuracyCurve& reference, const RateAccuracyCurve& test) {
  const auto [rx, ry] = detail::log_rate_percent(reference);
  const auto [tx, ty] = detail::log_rate_percent(test);
  const double lo = std::max(rx.front(), tx.front()), hi = std::min(rx.back(), tx.back());
  if (!(hi > lo)) throw InvalidArgument("bd_metric: curves do not overlap in rate");
  const Pchip pr(rx, ry), pt(tx, ty);
  return (pt.integrate(lo, hi) - pr.integrate(lo, hi)) / (hi - lo);
}

/// Mean bitrate change (percent) of test over reference at equal accuracy.
/// Needs strictly increasing accuracy on both curves.
inline double bd_rate(const RateAccuracyCurve& reference, const RateAccuracyCurve& test) {
  auto invert = [](const RateAccuracyCurve& c) {
    auto [x, y] = detail::log_rate_percent(c);
    for (std::size_t i = 1; i < y.size(); ++i)
      if (!(y[i] > y[i - 1])) throw InvalidArgument("bd_rate: accuracy must increase strictly with rate");
    return std::pair{y, x};
  };
  const auto [ra, rl] = invert(reference);
  const auto [ta, tl] = invert(test);
  const double lo = std::max(ra.front(), ta.front()), hi = std::min(ra.back(), ta.back());
  if (!(hi > lo)) throw InvalidArgument("bd_rate: curves do not overlap in accuracy");
  const double diff = (Pchip(ta, tl).integrate(lo, hi) - Pchip(ra, rl).integrate(lo, hi)) / (hi - lo);
  return (std::exp(diff) - 1.0) * 100.0;
}

// ---------------------------------------------------------------------------
// Quality deltas
// ---------------------------------------------------------------------------

struct QualityDeltaReport {
  double mean_abs_dpsnr = 0;
  double mean_abs_dssim = 0;
  double r2_psnr = 0;
  double r2_ssim = 0;
  std::size_t count = 0;
};

/// Coefficient of determination of the least-squares line predicting y from x.
inline double r_squared(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw InvalidArgument("r_squared: lists must be aligned and non-empty");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0) return 1.0;
  if (sxx == 0) return 0.0;
  const double slope = sxy / sxx, icpt = my - slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (slope * x[i] + icpt);
    ss_res += r * r;
  }
  return 1.0 - ss_res / syy;
}

inline QualityDeltaReport quality_delta_report(std::span<const FidelityReport> gt, std::span<const FidelityReport> pred) {
  if (gt.empty()) throw InvalidArgument("quality_delta_report: empty input");
  if (gt.size() != pred.size()) throw InvalidArgument("quality_delta_report: object lists differ in length");
  std::vector<double> gp, pp, gs, ps;
  QualityDeltaReport r;
  r.count = gt.size();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gp.push_back(gt[i].psnr);
    pp.push_back(pred[i].psnr);
    gs.push_back(gt[i].ssim);
    ps.push_back(pred[i].ssim);
    r.mean_abs_dpsnr += std::abs(pred[i].psnr - gt[i].psnr);
    r.mean_abs_dssim += std::abs(pred[i].ssim - gt[i].ssim);
  }
  r.mean_abs_dpsnr /= static_cast<double>(r.count);
  r.mean_abs_dssim /= static_cast<double>(r.count);
  r.r2_psnr = r_squared(gp, pp);
  r.r2_ssim = r_squared(gs, ps);
  return r;
}

/// Per-object fidelity of both reconstructions against the original crops.
struct ObjectRecons {
  ImagePlane original, gt_recon, pred_recon;
};

inline QualityDeltaReport quality_delta_report(const std::vector<ObjectRecons>& objects) {
  if (objects.empty()) throw InvalidArgument("quality_delta_report: empty input");
  std::vector<FidelityReport> g, p;
  for (const auto& o : objects) {
    g.push_back(metrics::fidelity(o.original, o.gt_recon));
    p.push_back(metrics::fidelity(o.original, o.pred_recon));
  }
  return quality_delta_report(g, p);
}

// ---------------------------------------------------------------------------
// Serialization and plots
// ---------------------------------------------------------------------------

inline std::string curve_to_csv(const RateAccuracyCurve& c) {
  std::string out = "bpp,accuracy\n";
  char buf[64];
  for (const auto& p : c.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.bpp, p.accuracy);
    out += buf;
  }
  return out;
}

inline RateAccuracyCurve curve_from_csv(const std::string& text, std::string label, Task task,
                                        const std::string& source = "csv") {
  RateAccuracyCurve c{std::move(label), task, {}};
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("bpp", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(source, "line " + std::to_string(line_no) + ": expected bpp,accuracy");
    try {
      c.points.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    } catch (const std::exception&) {
      throw ParseError(source, "line " + std::to_string(line_no) + ": not a number");
    }
  }
  c.normalize();
  return c;
}

inline nlohmann::ordered_json curve_to_json(const RateAccuracyCurve& c) {
  nlohmann::ordered_json pts = nlohmann::ordered_json::array();
  for (const auto& p : c.points) pts.push_back({{"bpp", p.bpp}, {"accuracy", p.accuracy}});
  return {{"schema_version", 1}, {"label", c.label}, {"task", std::string(task_name(c.task))}, {"points", pts}};
}

inline nlohmann::ordered_json report_to_json(const QualityDeltaReport& r) {
  return {{"count", r.count},
          {"mean_abs_dpsnr", r.mean_abs_dpsnr},
          {"mean_abs_dssim", r.mean_abs_dssim},
          {"r2_psnr", r.r2_psnr},
          {"r2_ssim", r.r2_ssim}};
}

/// Accuracy (percent) against bpp, one polyline per curve.
inline std::string curves_to_svg(const std::vector<RateAccuracyCurve>& curves, const std::string& title = "") {
  constexpr double W = 640, H = 400, ml = 60, mr = 20, mt = 30, mb = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      x0 = std::min(x0, p.bpp);
      x1 = std::max(x1, p.bpp);
      y0 = std::min(y0, 100 * p.accuracy);
      y1 = std::max(y1, 100 * p.accuracy);
    }
  if (curves.empty() || x0 > x1) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 100;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">bpp</text>\n";
  s << "<text x=\"15\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15 " << H / 2
    << ")\" text-anchor=\"middle\">accuracy (%)</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    s << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\" font-size=\"10\">" << xv << "</text>\n";
    s << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << yv << "</text>\n";
  }
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* col = colors[k % 6];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curves[k].points) s << px(p.bpp) << "," << py(100 * p.accuracy) << " ";
    s << "\"/>\n";
    s << "<text x=\"" << W - mr - 150 << "\" y=\"" << mt + 16 * (k + 1) << "\" fill=\"" << col << "\" font-size=\"12\">"
      << curves[k].label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace mtjrd::evaluation

#endif  // MTJRD_EVALUATION_HPP
