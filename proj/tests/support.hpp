#ifndef MTJRD_TESTS_SUPPORT_HPP
#define MTJRD_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mtjrd/annotation.hpp"
#include "mtjrd/evaluation.hpp"
#include "mtjrd/image_io.hpp"

namespace mtjrd::test_support {

inline std::string data_path(const std::string& rel) { return std::string(MTJRD_TEST_DATA) + "/" + rel; }

inline ImagePlane regression_image() { return io::read_image(data_path("chelsea256.ppm")); }

/// Brute-force JRD: first start of a W-long all-zero window (clipped windows at the
/// end count only when every remaining label is zero), minus one.
inline int jrd_oracle(const std::array<std::uint8_t, 64>& labels, int w) {
  for (int start = 0; start < 64; ++start) {
    const int end = std::min(64, start + w);
    bool zero = true;
    for (int i = start; i < end; ++i) zero = zero && labels[i] == 0;
    if (!zero) continue;
    if (end - start == w) return start - 1;
    bool rest = true;
    for (int i = start; i < 64; ++i) rest = rest && labels[i] == 0;
    if (rest) return start - 1;
  }
  return 63;
}

/// Synthetic quality traces whose similarity and confidence decay with q at an
/// object-specific rate, with noise.
inline std::vector<annotation::ObjectTraces> synthetic_traces(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<annotation::ObjectTraces> out;
  for (std::size_t i = 0; i < n; ++i) {
    annotation::ObjectTraces ot;
    ot.image_id = "img" + std::to_string(i / 4);
    ot.object_id = static_cast<int>(i % 4);
    const double w = 20 + 200 * u(rng), h = 20 + 200 * u(rng);
    ot.box = BoundingBox(u(rng) * (640 - w), u(rng) * (480 - h), w, h);
    ot.attrs = attribute_triplet(ot.box, 640, 480);
    for (Task t : kAllTasks) {
      annotation::QualityTrace tr;
      tr.reference_class = 1;
      const double d = 10 + 70 * u(rng), p = 0.7 + 2 * u(rng);
      for (int q = 0; q < 64; ++q) {
        const double base = 1 - 0.5 * std::pow(q / d, p);
        const double sim = std::clamp(base + 0.08 * (u(rng) - 0.5), 0.0, 1.0);
        const double conf = std::clamp(base + 0.1 + 0.08 * (u(rng) - 0.5), 0.0, 1.0);
        const int cls = u(rng) < 0.03 ? 2 : 1;
        tr.levels[q] = QualityTriple(cls, conf, sim);
      }
      ot.traces[t] = tr;
    }
    out.push_back(std::move(ot));
  }
  return out;
}

// Independent Fritsch-Carlson PCHIP evaluation (SciPy's slope rule).
inline double pchip_eval(const std::vector<double>& x, const std::vector<double>& y, double v) {
  const std::size_t n = x.size();
  std::vector<double> h(n - 1), d(n - 1), m(n);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x[i + 1] - x[i];
    d[i] = (y[i + 1] - y[i]) / h[i];
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (d[i - 1] * d[i] <= 0) {
      m[i] = 0;
    } else {
      const double w1 = 2 * h[i] + h[i - 1], w2 = h[i] + 2 * h[i - 1];
      m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
    }
  }
  auto edge = [](double h0, double h1, double d0, double d1) {
    double s = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0) return 0.0;
    if (d0 * d1 < 0 && std::abs(s) > 3 * std::abs(d0)) return 3 * d0;
    return s;
  };
  m[0] = edge(h[0], h[1], d[0], d[1]);
  m[n - 1] = edge(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  std::size_t i = 0;
  while (i + 2 < n && v > x[i + 1]) ++i;
  const double t = (v - x[i]) / h[i];
  const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
  const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
  return h00 * y[i] + h10 * h[i] * m[i] + h01 * y[i + 1] + h11 * h[i] * m[i + 1];
}

/// Fine-grid trapezoid of the PCHIP difference over the overlapping log-rate range.
inline double bd_oracle(const evaluation::RateAccuracyCurve& ref, const evaluation::RateAccuracyCurve& test) {
  auto xy = [](const evaluation::RateAccuracyCurve& c) {
    std::vector<double> x, y;
    for (const auto& p : c.points) {
      x.push_back(std::log(p.bpp));
      y.push_back(100 * p.accuracy);
    }
    return std::pair{x, y};
  };
  const auto [rx, ry] = xy(ref);
  const auto [tx, ty] = xy(test);
  const double lo = std::max(rx.front(), tx.front()), hi = std::min(rx.back(), tx.back());
  const int n = 200000;
  double s = 0;
  for (int k = 0; k <= n; ++k) {
    const double v = lo + (hi - lo) * k / n;
    const double f = pchip_eval(tx, ty, v) - pchip_eval(rx, ry, v);
    s += (k == 0 || k == n) ? f / 2 : f;
  }
  return s / n;
}

}  // namespace mtjrd::test_support

#endif
