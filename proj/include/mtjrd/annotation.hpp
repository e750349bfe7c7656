#ifndef MTJRD_ANNOTATION_HPP
#define MTJRD_ANNOTATION_HPP

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtjrd/core.hpp"
#include "mtjrd/image_io.hpp"
#include "mtjrd/metrics.hpp"
#include "mtjrd/parallel.hpp"

namespace mtjrd {

inline constexpr int kSchemaVersion = 1;

/// Machine quality of one distorted response: class, confidence and similarity to the original.
struct QualityTriple {
  int class_id = -1;
  double confidence = 0.0;
  double similarity = 0.0;

  QualityTriple() = default;
  QualityTriple(int cls, double conf, double sim) : class_id(cls), confidence(conf), similarity(sim) {
    if (!(conf >= 0 && conf <= 1) || !(sim >= 0 && sim <= 1))
      throw InvalidArgument("QualityTriple: confidence and similarity must lie in [0,1]");
  }
  friend bool operator==(const QualityTriple&, const QualityTriple&) = default;
};

struct LabelSequence {
  Task task = Task::OD;
  std::array<std::uint8_t, kNumLevels> labels{};
};

namespace annotation {

inline constexpr double kDefaultThreshold = 0.75;
inline constexpr int kDefaultWindow = 3;
inline constexpr double kDefaultMinKeypointArea = 32.0 * 32.0;

/// Recognizable iff the class matches and both confidence and similarity strictly exceed T.
inline bool make_label(const QualityTriple& q, int reference_class, double threshold) {
  return q.class_id == reference_class && q.confidence > threshold && q.similarity > threshold;
}

/// Sliding-window transition search. The JRD is one below the first level that opens a
/// window of W unrecognizable labels (a window clipped at q = 63 must be all zero to count).
/// Returns 63 when no such window exists and -1 when the object fails at q = 0.
inline int jrd_from_labels(const LabelSequence& seq, int window) {
  if (window < 1) throw InvalidArgument("jrd_from_labels: window must be >= 1");
  int run = 0;  // trailing zeros ending at q
  for (int q = 0; q < kNumLevels; ++q) {
    run = seq.labels[q] ? 0 : run + 1;
    if (run >= window) return q - window;  // window starts at q - window + 1
  }
  if (run > 0) return kNumLevels - run - 1;  // all remaining labels are zero
  return kMaxJrd;
}

struct Match {
  std::optional<std::size_t> index;
  SimilarityScore similarity;
};

/// Picks the candidate most similar to the original output (first on ties).
inline Match match_response(const TaskResponse& original, std::span<const TaskResponse> candidates,
                            std::span<const double> k = metrics::kCocoKeypointConstants) {
  Match best{std::nullopt, SimilarityScore(0.0)};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].task() != original.task())
      throw InvalidArgument("match_response: candidate task differs from original");
    const auto s = metrics::task_similarity(original.output(), candidates[i].output(), k);
    if (!best.index || s.value() > best.similarity.value()) best = {i, s};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Response files
// ---------------------------------------------------------------------------

inline constexpr int kOriginalLevel = -1;

struct Detection {
  TaskResponse response;
  std::optional<int> object_id;
};

struct ResponseFile {
  std::string image_id;
  int level = kOriginalLevel;  // -1 for the original image, else q
  Task task = Task::OD;
  int width = 0, height = 0;
  std::vector<Detection> detections;
};

namespace detail {

inline BoundingBox parse_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidArgument("box must be [x, y, w, h]");
  return BoundingBox(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline Mask parse_rle(const nlohmann::json& j) {
  const auto& size = j.at("size");
  const int h = size.at(0).get<int>(), w = size.at(1).get<int>();
  const auto& counts = j.at("counts");
  std::vector<std::uint32_t> runs;
  if (counts.is_string())
    runs = io::coco_string_to_runs(counts.get<std::string>());
  else
    runs = counts.get<std::vector<std::uint32_t>>();
  return io::runs_to_mask(runs, w, h);
}

inline KeypointSet parse_keypoints(const nlohmann::json& j, double area) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 3 * kNumKeypoints) throw InvalidArgument("keypoints must hold 51 numbers");
  std::vector<Keypoint> pts(kNumKeypoints);
  for (int i = 0; i < kNumKeypoints; ++i)
    pts[i] = {v[3 * i], v[3 * i + 1], static_cast<int>(v[3 * i + 2])};
  return KeypointSet(std::move(pts), area);
}

}  // namespace detail

inline Detection parse_detection(const nlohmann::json& j, Task task,
                                 const std::filesystem::path& base_dir) {
  const int cls = j.at("class_id").get<int>();
  const double conf = j.at("confidence").get<double>();
  std::optional<BoundingBox> box;
  if (j.contains("box")) box = detail::parse_box(j.at("box"));
  std::optional<int> oid;
  if (j.contains("object_id")) oid = j.at("object_id").get<int>();
  switch (task) {
    case Task::OD:
      if (!box) throw InvalidArgument("OD detection needs a box");
      return {TaskResponse(task, cls, conf, *box, box), oid};
    case Task::IS: {
      Mask m;
      if (j.contains("rle"))
        m = detail::parse_rle(j.at("rle"));
      else if (j.contains("mask_png"))
        m = io::read_mask_png(base_dir / j.at("mask_png").get<std::string>());
      else
        throw InvalidArgument("IS detection needs rle or mask_png");
      return {TaskResponse(task, cls, conf, std::move(m), box), oid};
    }
    case Task::KPD: {
      double area = 0;
      if (j.contains("area"))
        area = j.at("area").get<double>();
      else if (box)
        area = box->area();
      else
        throw InvalidArgument("KPD detection needs area or box");
      return {TaskResponse(task, cls, conf, detail::parse_keypoints(j.at("keypoints"), area), box),
              oid};
    }
  }
  throw InvalidArgument("unknown task");
}

inline ResponseFile parse_response_file(const nlohmann::json& j, const std::filesystem::path& path) {
  try {
    ResponseFile rf;
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion)
      throw InvalidArgument("unsupported schema_version");
    rf.image_id = j.at("image_id").is_string() ? j.at("image_id").get<std::string>()
                                               : std::to_string(j.at("image_id").get<long long>());
    const auto& qp = j.at("qp");
    if (qp.is_string()) {
      if (qp.get<std::string>() != "orig") throw InvalidArgument("qp must be 0..63 or \"orig\"");
      rf.level = kOriginalLevel;
    } else {
      rf.level = qp.get<int>();
      if (rf.level < 0 || rf.level > kMaxJrd) throw InvalidArgument("qp must be 0..63 or \"orig\"");
    }
    rf.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("width")) rf.width = j.at("width").get<int>();
    if (j.contains("height")) rf.height = j.at("height").get<int>();
    for (const auto& d : j.at("detections"))
      rf.detections.push_back(parse_detection(d, rf.task, path.parent_path()));
    return rf;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string(), e.what());
  }
}

inline ResponseFile read_response_file(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string(), e.what());
  }
  return parse_response_file(j, path);
}

/// Original plus 64 distorted responses for one image and task.
struct ResponseLadder {
  std::optional<ResponseFile> original;
  std::array<std::optional<ResponseFile>, kNumLevels> levels;
};

using ResponseIndex = std::map<std::string, std::map<Task, ResponseLadder>>;

/// Loads every *.json under `dir` (recursively) and indexes it by image and task.
inline ResponseIndex load_responses(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ResponseIndex index;
  for (const auto& f : files) {
    ResponseFile rf = read_response_file(f);
    auto& ladder = index[rf.image_id][rf.task];
    auto& slot = rf.level == kOriginalLevel ? ladder.original : ladder.levels[static_cast<std::size_t>(rf.level)];
    if (slot)
      throw ParseError(f.string(), "duplicate response for image " + rf.image_id + " task " +
                                       std::string(task_name(rf.task)));
    slot = std::move(rf);
  }
  for (const auto& [image, tasks] : index)
    for (const auto& [task, ladder] : tasks) {
      const std::string what = "image " + image + " task " + std::string(task_name(task));
      if (!ladder.original) throw IoError("missing original response for " + what);
      for (int q = 0; q < kNumLevels; ++q)
        if (!ladder.levels[static_cast<std::size_t>(q)])
          throw IoError("missing response for " + what + " at q=" + std::to_string(q));
    }
  return index;
}

// ---------------------------------------------------------------------------
// Annotation building
// ---------------------------------------------------------------------------

struct BuildOptions {
  double threshold = kDefaultThreshold;
  int window = kDefaultWindow;
  double min_keypoint_area = kDefaultMinKeypointArea;
  std::optional<int> class_filter;  // keep only original detections of this class
  double association_iou = 0.5;     // cross-task object association when object_id is absent
  unsigned threads = 1;
  std::vector<double> keypoint_constants{metrics::kCocoKeypointConstants.begin(),
                                         metrics::kCocoKeypointConstants.end()};
};

/// Quality over the 64 levels for one object and task.
struct QualityTrace {
  int reference_class = 0;
  std::array<QualityTriple, kNumLevels> levels;
};

struct ObjectTraces {
  std::string image_id;
  int object_id = 0;
  BoundingBox box;
  AttributeTriplet attrs;
  std::map<Task, QualityTrace> traces;
};

inline LabelSequence label_trace(const QualityTrace& trace, Task task, double threshold) {
  LabelSequence seq;
  seq.task = task;
  for (int q = 0; q < kNumLevels; ++q)
    seq.labels[q] = make_label(trace.levels[q], trace.reference_class, threshold) ? 1 : 0;
  return seq;
}

inline QualityTrace trace_object(const TaskResponse& original, const ResponseLadder& ladder,
                                 std::span<const double> k) {
  QualityTrace tr;
  tr.reference_class = original.class_id();
  for (int q = 0; q < kNumLevels; ++q) {
    const auto& dets = ladder.levels[static_cast<std::size_t>(q)]->detections;
    std::vector<TaskResponse> cands;
    cands.reserve(dets.size());
    for (const auto& d : dets) cands.push_back(d.response);
    const Match m = match_response(original, cands, k);
    if (m.index) {
      const auto& c = cands[*m.index];
      tr.levels[q] = QualityTriple(c.class_id(), c.confidence(), m.similarity.value());
    } else {
      tr.levels[q] = QualityTriple(-1, 0.0, 0.0);
    }
  }
  return tr;
}

namespace detail {

struct PendingObject {
  int object_id;
  std::optional<int> explicit_id;
  BoundingBox box;
  std::map<Task, const Detection*> originals;
};

}  // namespace detail

/// Per-object quality traces for one image.
inline std::vector<ObjectTraces> trace_image(const std::string& image_id,
                                             const std::map<Task, ResponseLadder>& tasks,
                                             const BuildOptions& opt) {
  std::vector<detail::PendingObject> objects;
  int width = 0, height = 0;
  for (Task t : kAllTasks) {
    auto it = tasks.find(t);
    if (it == tasks.end()) continue;
    const ResponseFile& orig = *it->second.original;
    if (orig.width > 0) width = orig.width;
    if (orig.height > 0) height = orig.height;
    for (const auto& det : orig.detections) {
      const auto& r = det.response;
      if (opt.class_filter && r.class_id() != *opt.class_filter) continue;
      if (t == Task::KPD) {
        const auto& kp = std::get<KeypointSet>(r.output());
        if (kp.area() < opt.min_keypoint_area || !kp.bounds()) continue;
      }
      const auto box = r.box();
      if (!box) continue;
      detail::PendingObject* target = nullptr;
      if (det.object_id) {
        for (auto& o : objects)
          if (o.explicit_id == det.object_id) target = &o;
      } else {
        double best = opt.association_iou;
        for (auto& o : objects) {
          if (o.originals.count(t) || o.explicit_id) continue;
          const double iou = metrics::box_iou(o.box, *box).value();
          if (iou >= best) {
            best = iou;
            target = &o;
          }
        }
      }
      if (!target) {
        objects.push_back({det.object_id.value_or(static_cast<int>(objects.size())), det.object_id,
                           *box, {}});
        target = &objects.back();
      }
      if (!target->originals.count(t)) target->originals[t] = &det;
    }
  }
  if (width <= 0 || height <= 0)
    throw ParseError(image_id, "original responses must carry image width and height");

  std::vector<ObjectTraces> out;
  for (const auto& o : objects) {
    ObjectTraces ot;
    ot.image_id = image_id;
    ot.object_id = o.object_id;
    const double bx = std::clamp(o.box.x, 0.0, static_cast<double>(width) - 1);
    const double by = std::clamp(o.box.y, 0.0, static_cast<double>(height) - 1);
    ot.box = BoundingBox(bx, by, std::min(o.box.right(), static_cast<double>(width)) - bx,
                         std::min(o.box.bottom(), static_cast<double>(height)) - by);
    ot.attrs = attribute_triplet(ot.box, width, height);
    for (const auto& [t, det] : o.originals) {
      try {
        ot.traces[t] = trace_object(det->response, tasks.at(t), opt.keypoint_constants);
      } catch (const UndefinedSimilarity&) {
        // object has no labeled keypoints; excluded from this task
      }
    }
    out.push_back(std::move(ot));
  }
  return out;
}

inline std::vector<ObjectTraces> trace_all(const ResponseIndex& index, const BuildOptions& opt) {
  std::vector<const std::pair<const std::string, std::map<Task, ResponseLadder>>*> images;
  for (const auto& kv : index) images.push_back(&kv);
  std::vector<std::vector<ObjectTraces>> per_image(images.size());
  parallel_for(images.size(), opt.threads,
               [&](std::size_t i) { per_image[i] = trace_image(images[i]->first, images[i]->second, opt); });
  std::vector<ObjectTraces> all;
  for (auto& v : per_image)
    for (auto& o : v) all.push_back(std::move(o));
  return all;
}

/// JRDs for every traced object at a given threshold; tasks with JRD -1 are left absent.
inline std::vector<JrdAnnotation> annotate_traces(const std::vector<ObjectTraces>& traces,
                                                  double threshold, int window) {
  if (!(threshold > 0 && threshold < 1)) throw InvalidArgument("threshold must lie in (0,1)");
  std::vector<JrdAnnotation> out;
  out.reserve(traces.size());
  for (const auto& ot : traces) {
    JrdAnnotation a;
    a.image_id = ot.image_id;
    a.object_id = ot.object_id;
    a.box = ot.box;
    a.attrs = ot.attrs;
    for (const auto& [t, tr] : ot.traces) {
      const int j = jrd_from_labels(label_trace(tr, t, threshold), window);
      if (j >= 0) a.set_jrd(t, j);
    }
    out.push_back(std::move(a));
  }
  std::stable_sort(out.begin(), out.end(), [](const JrdAnnotation& x, const JrdAnnotation& y) {
    return std::tie(x.image_id, x.object_id) < std::tie(y.image_id, y.object_id);
  });
  return out;
}

inline std::vector<JrdAnnotation> build_annotations(const std::filesystem::path& responses_dir,
                                                    const BuildOptions& opt) {
  return annotate_traces(trace_all(load_responses(responses_dir), opt), opt.threshold, opt.window);
}

// ---------------------------------------------------------------------------
// Annotation JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const JrdAnnotation& a) {
  nlohmann::ordered_json j;
  j["image_id"] = a.image_id;
  j["object_id"] = a.object_id;
  j["box"] = {a.box.x, a.box.y, a.box.w, a.box.h};
  j["attrs"] = {{"s", a.attrs.s}, {"x0", a.attrs.x0}, {"y0", a.attrs.y0}};
  nlohmann::ordered_json jrd = nlohmann::ordered_json::object();
  for (Task t : kAllTasks)
    if (auto v = a.jrd_for(t)) jrd[std::string(task_name(t))] = *v;
  j["jrd"] = std::move(jrd);
  return j;
}

inline std::string annotations_to_json(const std::vector<JrdAnnotation>& anns, double threshold,
                                       int window) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["threshold"] = threshold;
  j["window"] = window;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& a : anns) arr.push_back(to_json(a));
  j["annotations"] = std::move(arr);
  return j.dump(2) + "\n";
}

inline JrdAnnotation annotation_from_json(const nlohmann::json& j) {
  JrdAnnotation a;
  a.image_id = j.at("image_id").get<std::string>();
  a.object_id = j.at("object_id").get<int>();
  a.box = detail::parse_box(j.at("box"));
  const auto& at = j.at("attrs");
  a.attrs = AttributeTriplet(at.at("s").get<double>(), at.at("x0").get<double>(), at.at("y0").get<double>());
  for (const auto& [k, v] : j.at("jrd").items()) a.set_jrd(parse_task(k), v.get<int>());
  return a;
}

inline std::vector<JrdAnnotation> read_annotations(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw ParseError(path.string(), "unsupported schema_version");
    std::vector<JrdAnnotation> out;
    for (const auto& a : j.at("annotations")) out.push_back(annotation_from_json(a));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string(), e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(path.string(), e.what());
  }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct TaskStats {
  std::size_t count = 0;
  std::optional<double> mean;
  std::array<std::size_t, kNumLevels> histogram{};
  std::array<std::optional<double>, 10> size_deciles;  // ascending size, equally populated
  std::array<std::optional<double>, 9> location_grid;  // row-major 3x3 over (x0, y0)
  std::array<std::size_t, 10> decile_counts{};
};

struct SweepPoint {
  double threshold = 0;
  std::map<Task, std::optional<double>> mean;
};

struct DatasetStats {
  std::map<Task, TaskStats> tasks;
  std::vector<SweepPoint> sweep;
};

inline constexpr std::array<double, 5> kSweepThresholds = {0.65, 0.70, 0.75, 0.80, 0.85};

inline int grid_cell(double v) { return std::clamp(static_cast<int>(v * 3.0), 0, 2); }

inline DatasetStats dataset_stats(const std::vector<JrdAnnotation>& anns) {
  DatasetStats st;
  for (Task t : kAllTasks) {
    TaskStats ts;
    std::vector<std::pair<double, int>> by_size;  // (s, jrd)
    std::array<double, 9> cell_sum{};
    std::array<std::size_t, 9> cell_n{};
    double sum = 0;
    for (const auto& a : anns) {
      auto j = a.jrd_for(t);
      if (!j) continue;
      ++ts.count;
      sum += *j;
      ++ts.histogram[static_cast<std::size_t>(*j)];
      by_size.emplace_back(a.attrs.s, *j);
      const int cell = grid_cell(a.attrs.y0) * 3 + grid_cell(a.attrs.x0);
      cell_sum[static_cast<std::size_t>(cell)] += *j;
      ++cell_n[static_cast<std::size_t>(cell)];
    }
    if (ts.count) ts.mean = sum / static_cast<double>(ts.count);
    for (std::size_t c = 0; c < 9; ++c)
      if (cell_n[c]) ts.location_grid[c] = cell_sum[c] / static_cast<double>(cell_n[c]);
    if (by_size.size() >= 10) {
      std::stable_sort(by_size.begin(), by_size.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      const std::size_t n = by_size.size();
      for (std::size_t b = 0; b < 10; ++b) {
        const std::size_t lo = b * n / 10, hi = (b + 1) * n / 10;
        double s = 0;
        for (std::size_t i = lo; i < hi; ++i) s += by_size[i].second;
        ts.decile_counts[b] = hi - lo;
        ts.size_deciles[b] = s / static_cast<double>(hi - lo);
      }
    }
    st.tasks[t] = ts;
  }
  return st;
}

inline std::vector<SweepPoint> threshold_sweep(const std::vector<ObjectTraces>& traces,
                                               std::span<const double> thresholds, int window) {
  std::vector<SweepPoint> out;
  for (double T : thresholds) {
    const auto anns = annotate_traces(traces, T, window);
    SweepPoint p;
    p.threshold = T;
    const auto st = dataset_stats(anns);
    for (const auto& [t, ts] : st.tasks) p.mean[t] = ts.mean;
    out.push_back(std::move(p));
  }
  return out;
}

inline nlohmann::ordered_json stats_to_json(const DatasetStats& st) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
  for (const auto& [t, ts] : st.tasks) {
    nlohmann::ordered_json jt;
    jt["count"] = ts.count;
    jt["mean"] = opt(ts.mean);
    jt["histogram"] = ts.histogram;
    auto dec = nlohmann::ordered_json::array();
    for (const auto& d : ts.size_deciles) dec.push_back(opt(d));
    jt["size_deciles"] = dec;
    auto grid = nlohmann::ordered_json::array();
    for (const auto& g : ts.location_grid) grid.push_back(opt(g));
    jt["location_grid"] = grid;
    tasks[std::string(task_name(t))] = jt;
  }
  j["tasks"] = tasks;
  auto sweep = nlohmann::ordered_json::array();
  for (const auto& p : st.sweep) {
    nlohmann::ordered_json jp;
    jp["threshold"] = p.threshold;
    for (const auto& [t, m] : p.mean) jp[std::string(task_name(t))] = opt(m);
    sweep.push_back(jp);
  }
  j["threshold_sweep"] = sweep;
  return j;
}

}  // namespace annotation
}  // namespace mtjrd

#endif  // MTJRD_ANNOTATION_HPP
