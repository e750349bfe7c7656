#ifndef MTJRD_VCM_HPP
#define MTJRD_VCM_HPP

#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mtjrd/codec.hpp"
#include "mtjrd/core.hpp"
#include "mtjrd/image_io.hpp"
#include "mtjrd/metrics.hpp"
#include "mtjrd/parallel.hpp"
#include "mtjrd/qp_table.hpp"

namespace mtjrd::vcm {

/// Candidate quality factors, strictly increasing.
class QfCandidates {
 public:
  explicit QfCandidates(std::vector<int> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidArgument("QfCandidates: candidate set is empty");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i] < codec::kMinQf || values_[i] > codec::kMaxQf)
        throw InvalidArgument("QfCandidates: values must lie in [1,100]");
      if (i > 0 && values_[i] <= values_[i - 1])
        throw InvalidArgument("QfCandidates: values must be strictly increasing");
    }
  }

  static QfCandidates range(int lo, int hi, int step = 1) {
    std::vector<int> v;
    for (int q = lo; q <= hi; q += step) v.push_back(q);
    return QfCandidates(std::move(v));
  }

  const std::vector<int>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  int operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<int> values_;
};

/// Foreground ladders used for uniform-QF anchors in the experiments.
inline QfCandidates od_is_candidates() { return QfCandidates({42, 44, 46, 48, 50}); }
inline QfCandidates kpd_candidates() { return QfCandidates({46, 48, 50, 52, 54}); }

/// Quality factor standing in for a VVC QP when no external reference is supplied.
inline int qp_to_qf(int qp) {
  if (qp < 0 || qp > kMaxJrd) throw InvalidArgument("qp_to_qf: qp must lie in [0,63]");
  return kQpToQf[static_cast<std::size_t>(qp)];
}

inline double region_target_psnr(const ImagePlane& original, const ImagePlane& reference,
                                 const BoundingBox& box) {
  if (!original.same_shape(reference))
    throw InvalidArgument("region_target_psnr: image dimensions differ");
  if (!box.within(original.width(), original.height()))
    throw InvalidArgument("region_target_psnr: box lies outside the image");
  return metrics::region_psnr(original, reference, box);
}

/// Macroblock-aligned rectangle covering a box. Encoding this crop reproduces the
/// full-image reconstruction inside it exactly.
inline metrics::PixelRect aligned_rect(const BoundingBox& box, int image_w, int image_h) {
  const auto r = metrics::pixel_rect(box, image_w, image_h);
  constexpr int m = codec::kMacroblock;
  metrics::PixelRect a;
  a.x0 = r.x0 / m * m;
  a.y0 = r.y0 / m * m;
  a.x1 = std::min((r.x1 + m - 1) / m * m, image_w);
  a.y1 = std::min((r.y1 + m - 1) / m * m, image_h);
  while (a.width() < 8 && a.x0 > 0) a.x0 -= m;
  while (a.height() < 8 && a.y0 > 0) a.y0 -= m;
  return a;
}

/// Region PSNR as a function of a uniform quality factor, with memoization.
class RegionProbe {
 public:
  RegionProbe(const ImagePlane& original, const BoundingBox& box) {
    if (!box.within(original.width(), original.height()))
      throw InvalidArgument("search_qf: box lies outside the image");
    const auto a = aligned_rect(box, original.width(), original.height());
    crop_ = metrics::crop(original, a);
    const auto r = metrics::pixel_rect(box, original.width(), original.height());
    inner_ = {r.x0 - a.x0, r.y0 - a.y0, r.x1 - a.x0, r.y1 - a.y0};
  }

  double psnr(int qf) {
    if (auto it = cache_.find(qf); it != cache_.end()) return it->second;
    const ImagePlane rec = codec::decode(codec::encode_uniform(crop_, qf));
    const double v = metrics::psnr_from_mse(metrics::region_mse(crop_, rec, inner_));
    cache_.emplace(qf, v);
    return v;
  }

  std::size_t probes() const noexcept { return cache_.size(); }
  const std::map<int, double>& evaluated() const noexcept { return cache_; }

 private:
  ImagePlane crop_;
  metrics::PixelRect inner_;
  std::map<int, double> cache_;
};

struct SearchResult {
  int qf = 0;
  double psnr = 0;     // region PSNR at the chosen qf
  std::size_t probes = 0;
  bool exhaustive = false;  // fell back after a monotonicity violation
};

namespace detail {

inline bool better(double d, int qf, double best_d, int best_qf) {
  return d < best_d || (d == best_d && qf < best_qf);
}

inline SearchResult exhaustive(RegionProbe& probe, double target, const QfCandidates& cands) {
  SearchResult r;
  double best = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double p = probe.psnr(cands[i]);
    const double d = std::abs(p - target);
    if (i == 0 || better(d, cands[i], best, r.qf)) {
      best = d;
      r.qf = cands[i];
      r.psnr = p;
    }
  }
  r.probes = probe.probes();
  r.exhaustive = true;
  return r;
}

inline bool probed_monotone(const RegionProbe& probe) {
  double prev = -1;
  for (const auto& [qf, p] : probe.evaluated()) {
    if (p < prev) return false;
    prev = p;
  }
  return true;
}

}  // namespace detail

/// argmin over candidates of |PSNR(box at QF) - target|, smallest QF on ties.
/// Binary search assuming PSNR rises with QF; any non-monotone or flat probe falls back
/// to a full scan, so the result always equals the exhaustive argmin.
inline SearchResult search_qf_detailed(const ImagePlane& original, const BoundingBox& box,
                                       double target, const QfCandidates& cands) {
  if (!std::isfinite(target)) throw InvalidArgument("search_qf: target must be finite");
  RegionProbe probe(original, box);
  const std::size_t n = cands.size();
  if (n == 1) return {cands[0], probe.psnr(cands[0]), probe.probes(), false};

  // Smallest index whose PSNR reaches the target.
  std::size_t lo = 0, hi = n;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (probe.psnr(cands[mid]) >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  if (!detail::probed_monotone(probe)) return detail::exhaustive(probe, target, cands);

  SearchResult r;
  if (lo == n) {
    r.qf = cands[n - 1];
  } else if (lo == 0) {
    r.qf = cands[0];
  } else {
    const double d_lo = std::abs(probe.psnr(cands[lo - 1]) - target);
    const double d_hi = std::abs(probe.psnr(cands[lo]) - target);
    r.qf = d_lo <= d_hi ? cands[lo - 1] : cands[lo];
  }
  // A plateau ending at the chosen candidate could hide an equal-distance smaller QF.
  const auto it = std::find(cands.values().begin(), cands.values().end(), r.qf);
  const auto idx = static_cast<std::size_t>(it - cands.values().begin());
  if (idx > 0 && probe.psnr(cands[idx - 1]) == probe.psnr(r.qf))
    return detail::exhaustive(probe, target, cands);
  if (!detail::probed_monotone(probe)) return detail::exhaustive(probe, target, cands);
  r.psnr = probe.psnr(r.qf);
  r.probes = probe.probes();
  return r;
}

inline int search_qf(const ImagePlane& original, const BoundingBox& box, double target,
                     const QfCandidates& cands) {
  return search_qf_detailed(original, box, target, cands).qf;
}

// ---------------------------------------------------------------------------
// References
// ---------------------------------------------------------------------------

/// Reconstructions produced by an external codec, one file per image and QP:
/// <dir>/<image_id>/qpNN.{png,ppm}.
struct ExternalReferences {
  std::filesystem::path dir;

  std::filesystem::path path_for(const std::string& image_id, int qp) const {
    char name[16];
    std::snprintf(name, sizeof name, "qp%02d", qp);
    for (const char* ext : {".png", ".ppm", ".pgm"}) {
      auto p = dir / image_id / (std::string(name) + ext);
      if (std::filesystem::exists(p)) return p;
    }
    return dir / image_id / (std::string(name) + ".png");
  }
};

/// Self-contained stand-in: the image re-encoded at qp_to_qf(qp).
struct InternalReference {};

using ReferenceSource = std::variant<InternalReference, ExternalReferences>;

inline ImagePlane jrd_to_reference(const ImagePlane& image, const std::string& image_id,
                                   const BoundingBox& box, int jrd_qp,
                                   const ReferenceSource& source) {
  if (jrd_qp < 0 || jrd_qp > kMaxJrd) throw InvalidArgument("jrd_to_reference: qp must lie in [0,63]");
  if (!box.within(image.width(), image.height()))
    throw InvalidArgument("jrd_to_reference: box lies outside the image");
  if (const auto* ext = std::get_if<ExternalReferences>(&source)) {
    const auto path = ext->path_for(image_id, jrd_qp);
    if (!std::filesystem::exists(path)) throw IoError("missing reference reconstruction " + path.string());
    ImagePlane ref = io::read_image(path);
    if (!ref.same_shape(image))
      throw InvalidArgument("jrd_to_reference: reference " + path.string() + " does not match the image");
    return ref;
  }
  return codec::decode(codec::encode_uniform(image, qp_to_qf(jrd_qp)));
}

// ---------------------------------------------------------------------------
// Full-image coding
// ---------------------------------------------------------------------------

struct VcmObject {
  BoundingBox box;
  std::optional<int> jrd;            // QP-domain JRD for the active task
  std::optional<double> target_psnr; // overrides the reference when present
};

struct VcmJob {
  ImagePlane image;
  std::string image_id;
  Task task = Task::OD;
  std::vector<VcmObject> objects;
  int delta_qf = 0;
  int background_qf = 30;
};

struct VcmResult {
  codec::Bitstream stream;
  double bpp = 0;
  std::vector<int> searched_qf;  // argmin per object, before the offset
  std::vector<int> applied_qf;   // searched + delta, clamped to [1,100]
  std::vector<double> targets;
  codec::QfMap map;
};

inline VcmResult vcm_encode(const VcmJob& job, const QfCandidates& cands,
                            const ReferenceSource& source = InternalReference{},
                            unsigned threads = 1) {
  const int w = job.image.width(), h = job.image.height();
  VcmResult res;
  const std::size_t n = job.objects.size();
  res.searched_qf.assign(n, 0);
  res.applied_qf.assign(n, 0);
  res.targets.assign(n, 0);
  parallel_for(n, threads, [&](std::size_t k) {
    const auto& obj = job.objects[k];
    double target = 0;
    if (obj.target_psnr) {
      target = *obj.target_psnr;
    } else if (obj.jrd) {
      const ImagePlane ref = jrd_to_reference(job.image, job.image_id, obj.box, *obj.jrd, source);
      target = region_target_psnr(job.image, ref, obj.box);
    } else {
      throw InvalidArgument("vcm_encode: object " + std::to_string(k) + " has neither JRD nor target PSNR");
    }
    res.targets[k] = target;
    res.searched_qf[k] = search_qf(job.image, obj.box, target, cands);
    res.applied_qf[k] = std::clamp(res.searched_qf[k] + job.delta_qf, codec::kMinQf, codec::kMaxQf);
  });
  std::vector<codec::QfRegion> regions;
  for (std::size_t k = 0; k < n; ++k) regions.push_back({job.objects[k].box, res.applied_qf[k]});
  res.map = codec::rasterize_qfmap(regions, job.background_qf, w, h);
  res.stream = codec::encode(job.image, res.map);
  res.bpp = codec::measure_rate(res.stream, w, h);
  return res;
}

}  // namespace mtjrd::vcm

#endif  // MTJRD_VCM_HPP
