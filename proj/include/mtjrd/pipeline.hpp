#ifndef MTJRD_PIPELINE_HPP
#define MTJRD_PIPELINE_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtjrd/annotation.hpp"
#include "mtjrd/codec.hpp"
#include "mtjrd/core.hpp"
#include "mtjrd/evaluation.hpp"
#include "mtjrd/image_io.hpp"
#include "mtjrd/metrics.hpp"
#include "mtjrd/predictor.hpp"
#include "mtjrd/vcm.hpp"

namespace mtjrd::pipeline {

inline constexpr const char* kToolVersion = "1.0.0";

/// Configuration error tied to a named field.
class ValidationError : public InvalidArgument {
 public:
  ValidationError(std::string field, const std::string& what)
      : InvalidArgument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct PipelineConfig {
  std::string responses, images, annotations, predictions, references, output;
  double threshold = annotation::kDefaultThreshold;
  int window = annotation::kDefaultWindow;
  double min_keypoint_area = annotation::kDefaultMinKeypointArea;
  std::optional<int> class_filter;
  double sigma = predictor::kDefaultSigma;
  std::string task = "od";
  std::vector<int> candidates;  // empty: task default ladder
  int delta_qf = 0;
  std::vector<int> delta_ladder = {-4, -2, 0, 2, 4};
  int background_qf = 30;
  predictor::ModelConfig model;
  int epochs = 200;
  int batch_size = 8;
  double lr = 0.01;
  bool hflip = false;
  std::string predict_mode = "argmax";
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["responses"] = c.responses;
  j["images"] = c.images;
  j["annotations"] = c.annotations;
  j["predictions"] = c.predictions;
  j["references"] = c.references;
  j["output"] = c.output;
  j["threshold"] = c.threshold;
  j["window"] = c.window;
  j["min_keypoint_area"] = c.min_keypoint_area;
  j["class_filter"] = c.class_filter ? nlohmann::ordered_json(*c.class_filter) : nlohmann::ordered_json(nullptr);
  j["sigma"] = c.sigma;
  j["task"] = c.task;
  j["candidates"] = c.candidates;
  j["delta_qf"] = c.delta_qf;
  j["delta_ladder"] = c.delta_ladder;
  j["background_qf"] = c.background_qf;
  auto m = predictor::config_to_json(c.model);
  m.erase("seed");
  j["model"] = m;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["hflip"] = c.hflip;
  j["predict_mode"] = c.predict_mode;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

/// Overlays keys present in `j` onto `c`.
inline void merge_json(PipelineConfig& c, const nlohmann::json& j) {
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(key, e.what());
    }
  };
  for (const auto& [k, v] : j.items()) {
    static const char* known[] = {"responses",  "images",       "annotations", "predictions", "references",
                                  "output",     "threshold",    "window",      "min_keypoint_area",
                                  "class_filter", "sigma",      "task",        "candidates",  "delta_qf",
                                  "delta_ladder", "background_qf", "model",    "epochs",      "batch_size",
                                  "lr",         "hflip",        "predict_mode", "seed",       "threads"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) == std::end(known))
      throw ValidationError(k, "unknown configuration key");
  }
  field("responses", c.responses);
  field("images", c.images);
  field("annotations", c.annotations);
  field("predictions", c.predictions);
  field("references", c.references);
  field("output", c.output);
  field("threshold", c.threshold);
  field("window", c.window);
  field("min_keypoint_area", c.min_keypoint_area);
  if (j.contains("class_filter")) {
    if (j.at("class_filter").is_null())
      c.class_filter.reset();
    else
      c.class_filter = j.at("class_filter").get<int>();
  }
  field("sigma", c.sigma);
  field("task", c.task);
  field("candidates", c.candidates);
  field("delta_qf", c.delta_qf);
  field("delta_ladder", c.delta_ladder);
  field("background_qf", c.background_qf);
  if (j.contains("model")) {
    nlohmann::json m = predictor::config_to_json(c.model);
    m.update(j.at("model"));
    try {
      c.model = predictor::config_from_json(m);
    } catch (const std::exception& e) {
      throw ValidationError("model", e.what());
    }
  }
  field("epochs", c.epochs);
  field("batch_size", c.batch_size);
  field("lr", c.lr);
  field("hflip", c.hflip);
  field("predict_mode", c.predict_mode);
  field("seed", c.seed);
  field("threads", c.threads);
}

inline void validate(const PipelineConfig& c) {
  if (!(c.threshold > 0 && c.threshold < 1)) throw ValidationError("threshold", "must lie in (0,1)");
  if (c.window < 1 || c.window > kNumLevels) throw ValidationError("window", "must lie in [1,64]");
  if (!(c.sigma > 0)) throw ValidationError("sigma", "must be positive");
  if (c.background_qf < codec::kMinQf || c.background_qf > codec::kMaxQf)
    throw ValidationError("background_qf", "must lie in [1,100]");
  if (c.epochs < 0) throw ValidationError("epochs", "must be non-negative");
  if (c.batch_size < 1) throw ValidationError("batch_size", "must be positive");
  if (!(c.lr > 0)) throw ValidationError("lr", "must be positive");
  if (c.predict_mode != "argmax" && c.predict_mode != "expectation")
    throw ValidationError("predict_mode", "must be argmax or expectation");
  if (c.threads < 1) throw ValidationError("threads", "must be positive");
  try {
    parse_task(c.task);
  } catch (const InvalidArgument& e) {
    throw ValidationError("task", e.what());
  }
  try {
    c.model.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError("model", e.what());
  }
  if (!c.candidates.empty()) {
    try {
      vcm::QfCandidates q(c.candidates);
    } catch (const InvalidArgument& e) {
      throw ValidationError("candidates", e.what());
    }
  }
}

inline void require_path(const std::string& value, const char* field, bool directory) {
  if (value.empty()) throw ValidationError(field, "path is required");
  if (directory ? !std::filesystem::is_directory(value) : !std::filesystem::is_regular_file(value))
    throw ValidationError(field, std::string(directory ? "directory" : "file") + " does not exist: " + value);
}

inline vcm::QfCandidates candidates_for(const PipelineConfig& c, Task task) {
  if (!c.candidates.empty()) return vcm::QfCandidates(c.candidates);
  return task == Task::KPD ? vcm::kpd_candidates() : vcm::od_is_candidates();
}

inline predictor::PredictMode predict_mode(const PipelineConfig& c) {
  return c.predict_mode == "expectation" ? predictor::PredictMode::Expectation : predictor::PredictMode::Argmax;
}

// ---------------------------------------------------------------------------
// Images and datasets
// ---------------------------------------------------------------------------

/// <dir>/<image_id>.{png,ppm,pgm}
inline std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& image_id) {
  for (const char* ext : {".png", ".ppm", ".pgm"}) {
    auto p = dir / (image_id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("no image for " + image_id + " in " + dir.string());
}

class ImageCache {
 public:
  explicit ImageCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  const ImagePlane& get(const std::string& image_id) {
    auto it = cache_.find(image_id);
    if (it == cache_.end()) it = cache_.emplace(image_id, io::read_image(image_path(dir_, image_id))).first;
    return it->second;
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, ImagePlane> cache_;
};

inline std::vector<predictor::Sample> training_samples(const std::vector<JrdAnnotation>& anns, ImageCache& images,
                                                       int image_size) {
  std::vector<predictor::Sample> out;
  for (const auto& a : anns) {
    predictor::Sample s;
    s.image = predictor::prepare_input(images.get(a.image_id), a.box, image_size);
    s.attrs = a.attrs;
    for (Task t : kAllTasks) s.jrd[task_index(t)] = a.jrd_for(t);
    out.push_back(std::move(s));
  }
  return out;
}

/// Copies of `anns` whose JRDs are replaced by model predictions for all three tasks.
template <typename T>
std::vector<JrdAnnotation> predict_annotations(const predictor::Model<T>& model, const std::vector<JrdAnnotation>& anns,
                                               ImageCache& images, predictor::PredictMode mode) {
  std::vector<JrdAnnotation> out;
  for (const auto& a : anns) {
    JrdAnnotation p = a;
    p.jrd.clear();
    const auto input = predictor::prepare_input(images.get(a.image_id), a.box, model.config().image_size);
    const auto j = predictor::predict(model, input, a.attrs, mode);
    for (Task t : kAllTasks) p.set_jrd(t, j[task_index(t)]);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::map<std::string, std::vector<const JrdAnnotation*>> by_image(const std::vector<JrdAnnotation>& anns) {
  std::map<std::string, std::vector<const JrdAnnotation*>> m;
  for (const auto& a : anns) m[a.image_id].push_back(&a);
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation glue
// ---------------------------------------------------------------------------

inline vcm::VcmJob make_job(const ImagePlane& img, const std::string& image_id, Task task,
                            const std::vector<const JrdAnnotation*>& objs, int delta_qf, int background_qf) {
  vcm::VcmJob job{img, image_id, task, {}, delta_qf, background_qf};
  for (const auto* a : objs)
    if (auto j = a->jrd_for(task)) job.objects.push_back({a->box, *j, std::nullopt});
  return job;
}

struct TaskEvaluation {
  Task task = Task::OD;
  std::optional<predictor::PredictionErrorReport> errors;
  std::optional<evaluation::QualityDeltaReport> quality;
  std::vector<std::pair<int, double>> gt_rate, pred_rate;  // (delta_qf, mean bpp)
};

/// Object region of a reconstruction coded at the QP-domain JRD.
inline ImagePlane jrd_region(const ImagePlane& img, const std::string& image_id, const BoundingBox& box, int jrd,
                             const vcm::ReferenceSource& src) {
  const ImagePlane ref = vcm::jrd_to_reference(img, image_id, box, jrd, src);
  return metrics::crop(ref, vcm::aligned_rect(box, img.width(), img.height()));
}

inline TaskEvaluation evaluate_task(const std::vector<JrdAnnotation>& gt, const std::vector<JrdAnnotation>& pred,
                                    Task task, ImageCache& images, const PipelineConfig& cfg,
                                    const vcm::ReferenceSource& src) {
  if (gt.size() != pred.size()) throw InvalidArgument("evaluate: annotation lists differ in length");
  TaskEvaluation ev;
  ev.task = task;
  std::vector<int> p, g;
  std::vector<evaluation::ObjectRecons> recons;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i].image_id != pred[i].image_id || gt[i].object_id != pred[i].object_id)
      throw InvalidArgument("evaluate: annotation lists are not aligned at index " + std::to_string(i));
    const auto gj = gt[i].jrd_for(task), pj = pred[i].jrd_for(task);
    if (!gj || !pj) continue;
    g.push_back(*gj);
    p.push_back(*pj);
    const ImagePlane& img = images.get(gt[i].image_id);
    recons.push_back({metrics::crop(img, vcm::aligned_rect(gt[i].box, img.width(), img.height())),
                      jrd_region(img, gt[i].image_id, gt[i].box, *gj, src),
                      jrd_region(img, gt[i].image_id, gt[i].box, *pj, src)});
  }
  if (g.empty()) return ev;
  ev.errors = predictor::error_metrics(p, g);
  ev.quality = evaluation::quality_delta_report(recons);

  const auto cands = candidates_for(cfg, task);
  const auto gi = by_image(gt), pi = by_image(pred);
  for (int d : cfg.delta_ladder) {
    double gsum = 0, psum = 0;
    for (const auto& [id, objs] : gi) {
      const ImagePlane& img = images.get(id);
      gsum += vcm::vcm_encode(make_job(img, id, task, objs, d, cfg.background_qf), cands, src, cfg.threads).bpp;
      psum += vcm::vcm_encode(make_job(img, id, task, pi.at(id), d, cfg.background_qf), cands, src, cfg.threads).bpp;
    }
    ev.gt_rate.emplace_back(d, gsum / static_cast<double>(gi.size()));
    ev.pred_rate.emplace_back(d, psum / static_cast<double>(gi.size()));
  }
  return ev;
}

inline nlohmann::ordered_json to_json(const TaskEvaluation& ev) {
  nlohmann::ordered_json j;
  j["task"] = std::string(task_name(ev.task));
  if (ev.errors) {
    j["count"] = ev.errors->count;
    j["E_A"] = ev.errors->e_a;
    j["E_27_51"] = ev.errors->e_range ? nlohmann::ordered_json(*ev.errors->e_range) : nlohmann::ordered_json(nullptr);
    j["sigma_e"] = ev.errors->sigma_e;
  } else {
    j["count"] = 0;
  }
  if (ev.quality) j["quality"] = evaluation::report_to_json(*ev.quality);
  auto rate = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ev.gt_rate.size(); ++i)
    rate.push_back({{"delta_qf", ev.gt_rate[i].first}, {"bpp_gt", ev.gt_rate[i].second}, {"bpp_pred", ev.pred_rate[i].second}});
  j["rate"] = rate;
  return j;
}

}  // namespace mtjrd::pipeline

#endif  // MTJRD_PIPELINE_HPP
