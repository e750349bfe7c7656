#ifndef MTJRD_METRICS_HPP
#define MTJRD_METRICS_HPP

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "mtjrd/core.hpp"

namespace mtjrd {

/// Similarity in [0,1].
class SimilarityScore {
 public:
  SimilarityScore() = default;
  explicit SimilarityScore(double v) : value_(v) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("SimilarityScore must lie in [0,1]");
  }
  double value() const noexcept { return value_; }
  operator double() const noexcept { return value_; }

 private:
  double value_ = 0.0;
};

struct FidelityReport {
  double psnr = 0.0;
  double ssim = 0.0;
};

namespace metrics {

/// PSNR returned for identical images (and the ceiling for all others).
inline constexpr double kPsnrCap = 99.0;

/// Per-keypoint constants k_i = 2 * sigma_i from the COCO keypoint evaluation.
inline constexpr std::array<double, kNumKeypoints> kCocoKeypointConstants = {
    0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
    0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178};

inline SimilarityScore box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return SimilarityScore(0.0);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return SimilarityScore(std::clamp(inter / uni, 0.0, 1.0));
}

inline SimilarityScore mask_iou(const Mask& a, const Mask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw InvalidArgument("mask_iou: mask dimensions differ");
  std::size_t inter = 0, uni = 0;
  const auto& ab = a.bits();
  const auto& bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  if (uni == 0) return SimilarityScore(1.0);
  return SimilarityScore(static_cast<double>(inter) / static_cast<double>(uni));
}

/// Object keypoint similarity; the reference's labeled keypoints (v > 0) are evaluated.
inline SimilarityScore oks(const KeypointSet& reference, const KeypointSet& candidate,
                           std::span<const double> k = kCocoKeypointConstants) {
  if (k.size() != kNumKeypoints) throw InvalidArgument("oks: expected 17 keypoint constants");
  const auto& rp = reference.points();
  const auto& cp = candidate.points();
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < kNumKeypoints; ++i) {
    if (rp[i].visibility == 0) continue;
    const double dx = rp[i].x - cp[i].x;
    const double dy = rp[i].y - cp[i].y;
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * reference.area() * k[i] * k[i]));
    ++n;
  }
  if (n == 0) throw UndefinedSimilarity("oks: reference has no labeled keypoints");
  return SimilarityScore(std::clamp(sum / n, 0.0, 1.0));
}

/// Dispatches to the task's similarity measure. Outputs must share the same task.
inline SimilarityScore task_similarity(const TaskOutput& reference, const TaskOutput& candidate,
                                       std::span<const double> k = kCocoKeypointConstants) {
  if (reference.index() != candidate.index())
    throw InvalidArgument("task_similarity: outputs belong to different tasks");
  switch (task_of(reference)) {
    case Task::OD: return box_iou(std::get<BoundingBox>(reference), std::get<BoundingBox>(candidate));
    case Task::IS: return mask_iou(std::get<Mask>(reference), std::get<Mask>(candidate));
    case Task::KPD:
      return oks(std::get<KeypointSet>(reference), std::get<KeypointSet>(candidate), k);
  }
  return SimilarityScore(0.0);
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(255.0) - 10.0 * std::log10(mse));
}

inline double mse(const ImagePlane& a, const ImagePlane& b) {
  if (!a.same_shape(b)) throw InvalidArgument("mse: image dimensions differ");
  double acc = 0.0;
  const auto& sa = a.samples();
  const auto& sb = b.samples();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = static_cast<double>(sa[i]) - static_cast<double>(sb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(sa.size());
}

inline double psnr(const ImagePlane& a, const ImagePlane& b) { return psnr_from_mse(mse(a, b)); }

/// Integer pixel rectangle covering a box, clipped to the image.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
};

inline PixelRect pixel_rect(const BoundingBox& box, int image_w, int image_h) {
  PixelRect r;
  r.x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, image_w);
  r.y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, image_h);
  r.x1 = std::clamp(static_cast<int>(std::ceil(box.right())), 0, image_w);
  r.y1 = std::clamp(static_cast<int>(std::ceil(box.bottom())), 0, image_h);
  return r;
}

inline double region_mse(const ImagePlane& a, const ImagePlane& b, const PixelRect& r) {
  if (!a.same_shape(b)) throw InvalidArgument("region_mse: image dimensions differ");
  if (r.empty()) throw InvalidArgument("region_mse: empty region");
  double acc = 0.0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      for (int c = 0; c < a.channels(); ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - static_cast<double>(b.at(x, y, c));
        acc += d * d;
      }
  return acc / (static_cast<double>(r.width()) * r.height() * a.channels());
}

inline double region_psnr(const ImagePlane& a, const ImagePlane& b, const BoundingBox& box) {
  if (!a.same_shape(b)) throw InvalidArgument("region_psnr: image dimensions differ");
  return psnr_from_mse(region_mse(a, b, pixel_rect(box, a.width(), a.height())));
}

inline constexpr int kSsimWindow = 8;

/// Mean SSIM over all 8x8 windows (stride 1, uniform weights), averaged across channels.
inline double ssim(const ImagePlane& a, const ImagePlane& b) {
  if (!a.same_shape(b)) throw InvalidArgument("ssim: image dimensions differ");
  constexpr double c1 = (0.01 * 255) * (0.01 * 255);
  constexpr double c2 = (0.03 * 255) * (0.03 * 255);
  constexpr double n = kSsimWindow * kSsimWindow;
  const int w = a.width(), h = a.height(), ch = a.channels();
  double total = 0.0;
  for (int c = 0; c < ch; ++c) {
    double sum = 0.0;
    for (int y0 = 0; y0 + kSsimWindow <= h; ++y0)
      for (int x0 = 0; x0 + kSsimWindow <= w; ++x0) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = y0; y < y0 + kSsimWindow; ++y)
          for (int x = x0; x < x0 + kSsimWindow; ++x) {
            const double va = a.at(x, y, c), vb = b.at(x, y, c);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma;
        const double vb = sbb / n - mb * mb;
        const double cov = sab / n - ma * mb;
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    total += sum / (static_cast<double>(w - kSsimWindow + 1) * (h - kSsimWindow + 1));
  }
  return total / ch;
}

inline FidelityReport fidelity(const ImagePlane& a, const ImagePlane& b) {
  return {psnr(a, b), ssim(a, b)};
}

/// Copies a pixel rectangle out of an image (rectangle must be at least 8x8).
inline ImagePlane crop(const ImagePlane& img, const PixelRect& r) {
  ImagePlane out(r.width(), r.height(), img.channels());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(r.x0 + x, r.y0 + y, c);
  return out;
}

}  // namespace metrics
}  // namespace mtjrd

#endif  // MTJRD_METRICS_HPP
