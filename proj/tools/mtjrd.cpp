// mtjrd: command-line front end for annotation, coding, prediction and evaluation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mtjrd/annotation.hpp"
#include "mtjrd/codec.hpp"
#include "mtjrd/evaluation.hpp"
#include "mtjrd/hash.hpp"
#include "mtjrd/image_io.hpp"
#include "mtjrd/pipeline.hpp"
#include "mtjrd/predictor.hpp"
#include "mtjrd/vcm.hpp"

namespace fs = std::filesystem;
using namespace mtjrd;
using pipeline::PipelineConfig;
using pipeline::ValidationError;

namespace {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level log_level() {
  const char* v = std::getenv("MTJRD_LOG_LEVEL");
  if (!v) return Level::Warn;
  const std::string s(v);
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

void log(Level l, const std::string& msg) {
  static const Level current = log_level();
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= current) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << "\n";
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Flag values; only those given on the command line override the config.
struct Flags {
  std::string config;
  bool print_config = false;
  std::optional<std::string> responses, images, annotations, predictions, references, output, task, predict_mode;
  std::optional<double> threshold, min_kp_area, sigma, lr;
  std::optional<int> window, class_filter, delta_qf, background_qf, epochs, batch_size;
  std::optional<std::vector<int>> candidates, delta_ladder;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool hflip = false;
};

PipelineConfig resolve(const Flags& f) {
  PipelineConfig c;
  c.threads = default_threads();
  if (!f.config.empty()) {
    if (!fs::is_regular_file(f.config)) throw ValidationError("config", "file does not exist: " + f.config);
    const auto bytes = io::read_file(f.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("config", e.what());
    }
    pipeline::merge_json(c, j);
  }
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.responses, f.responses);
  set(c.images, f.images);
  set(c.annotations, f.annotations);
  set(c.predictions, f.predictions);
  set(c.references, f.references);
  set(c.output, f.output);
  set(c.task, f.task);
  set(c.predict_mode, f.predict_mode);
  set(c.threshold, f.threshold);
  set(c.min_keypoint_area, f.min_kp_area);
  set(c.sigma, f.sigma);
  set(c.lr, f.lr);
  set(c.window, f.window);
  if (f.class_filter) c.class_filter = *f.class_filter;
  set(c.delta_qf, f.delta_qf);
  set(c.background_qf, f.background_qf);
  set(c.epochs, f.epochs);
  set(c.batch_size, f.batch_size);
  set(c.candidates, f.candidates);
  set(c.delta_ladder, f.delta_ladder);
  set(c.seed, f.seed);
  set(c.threads, f.threads);
  if (f.hflip) c.hflip = true;
  c.model.seed = c.seed;
  pipeline::validate(c);
  return c;
}

/// Records inputs, resolved config and outputs with their hashes. No timestamps, so
/// identical runs produce identical manifests.
struct Manifest {
  std::string command;
  nlohmann::ordered_json config;
  std::vector<fs::path> inputs, outputs;

  void write(const fs::path& beside) const {
    nlohmann::ordered_json j;
    j["tool"] = "mtjrd";
    j["version"] = pipeline::kToolVersion;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = sha256_hex(config.dump());
    auto files = [](const std::vector<fs::path>& ps) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& p : ps) {
        nlohmann::ordered_json e;
        e["path"] = p.string();
        if (fs::is_regular_file(p)) e["sha256"] = sha256_file(p);
        arr.push_back(e);
      }
      return arr;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    io::write_text(fs::path(beside.string() + ".manifest.json"), j.dump(2) + "\n");
  }
};

fs::path require_output(const PipelineConfig& c) {
  if (c.output.empty()) throw ValidationError("output", "path is required");
  const fs::path p(c.output);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

BoundingBox parse_box_arg(const std::string& s, const char* field) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError(field, "expected x,y,w,h");
    }
  }
  if (v.size() != 4) throw ValidationError(field, "expected x,y,w,h");
  try {
    return BoundingBox(v[0], v[1], v[2], v[3]);
  } catch (const InvalidArgument& e) {
    throw ValidationError(field, e.what());
  }
}

void write_annotations_out(const fs::path& out, const std::vector<JrdAnnotation>& anns, const PipelineConfig& c) {
  io::write_text(out, annotation::annotations_to_json(anns, c.threshold, c.window));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_annotate(const PipelineConfig& c, Manifest& m) {
  pipeline::require_path(c.responses, "responses", true);
  const auto out = require_output(c);
  annotation::BuildOptions opt;
  opt.threshold = c.threshold;
  opt.window = c.window;
  opt.min_keypoint_area = c.min_keypoint_area;
  opt.class_filter = c.class_filter;
  opt.threads = c.threads;
  const auto anns = annotation::build_annotations(c.responses, opt);
  write_annotations_out(out, anns, c);
  log(Level::Info, "annotated " + std::to_string(anns.size()) + " objects");
  m.inputs = {c.responses};
  m.outputs = {out};
  return 0;
}

int cmd_stats(const PipelineConfig& c, Manifest& m) {
  pipeline::require_path(c.annotations, "annotations", false);
  const auto out = require_output(c);
  auto st = annotation::dataset_stats(annotation::read_annotations(c.annotations));
  m.inputs = {c.annotations};
  if (!c.responses.empty()) {
    pipeline::require_path(c.responses, "responses", true);
    annotation::BuildOptions opt;
    opt.min_keypoint_area = c.min_keypoint_area;
    opt.class_filter = c.class_filter;
    opt.threads = c.threads;
    const auto traces = annotation::trace_all(annotation::load_responses(c.responses), opt);
    st.sweep = annotation::threshold_sweep(traces, annotation::kSweepThresholds, c.window);
    m.inputs.push_back(c.responses);
  }
  io::write_text(out, annotation::stats_to_json(st).dump(2) + "\n");
  m.outputs = {out};
  return 0;
}

int cmd_encode(const PipelineConfig& c, const std::string& image, std::optional<int> qf,
               const std::vector<std::string>& regions, Manifest& m) {
  pipeline::require_path(image, "image", false);
  const auto out = require_output(c);
  const ImagePlane img = io::read_image(image);
  codec::Bitstream bs;
  if (regions.empty()) {
    if (!qf) throw ValidationError("qf", "either --qf or --region is required");
    if (*qf < codec::kMinQf || *qf > codec::kMaxQf) throw ValidationError("qf", "must lie in [1,100]");
    bs = codec::encode_uniform(img, *qf);
  } else {
    std::vector<codec::QfRegion> rs;
    for (const auto& r : regions) {
      const auto colon = r.rfind(':');
      if (colon == std::string::npos) throw ValidationError("region", "expected x,y,w,h:qf");
      int rq = 0;
      try {
        rq = std::stoi(r.substr(colon + 1));
      } catch (const std::exception&) {
        throw ValidationError("region", "expected x,y,w,h:qf");
      }
      rs.push_back({parse_box_arg(r.substr(0, colon), "region"), rq});
    }
    bs = codec::encode(img, codec::rasterize_qfmap(rs, qf.value_or(c.background_qf), img.width(), img.height()));
  }
  io::write_file(out, bs.bytes);
  std::cout << "bpp " << fmt("%.6f", codec::measure_rate(bs, img.width(), img.height())) << "\n";
  m.inputs = {image};
  m.outputs = {out};
  return 0;
}

int cmd_decode(const PipelineConfig& c, const std::string& input, Manifest& m) {
  pipeline::require_path(input, "input", false);
  const auto out = require_output(c);
  const codec::Bitstream bs{io::read_file(input)};
  io::write_image(out, codec::decode(bs));
  m.inputs = {input};
  m.outputs = {out};
  return 0;
}

int cmd_qf_search(const PipelineConfig& c, const std::string& image, const std::string& box,
                  std::optional<double> target, std::optional<int> jrd, Manifest& m) {
  pipeline::require_path(image, "image", false);
  const ImagePlane img = io::read_image(image);
  const BoundingBox b = parse_box_arg(box, "box");
  const Task task = parse_task(c.task);
  double t = 0;
  if (target) {
    t = *target;
  } else if (jrd) {
    vcm::ReferenceSource src = vcm::InternalReference{};
    if (!c.references.empty()) src = vcm::ExternalReferences{c.references};
    const std::string id = fs::path(image).stem().string();
    t = vcm::region_target_psnr(img, vcm::jrd_to_reference(img, id, b, *jrd, src), b);
  } else {
    throw ValidationError("target", "either --target or --jrd is required");
  }
  const auto r = vcm::search_qf_detailed(img, b, t, pipeline::candidates_for(c, task));
  nlohmann::ordered_json j{{"target_psnr", t}, {"qf", r.qf}, {"psnr", r.psnr}, {"probes", r.probes},
                           {"exhaustive", r.exhaustive}};
  std::cout << j.dump(2) << "\n";
  m.inputs = {image};
  if (!c.output.empty()) {
    const auto out = require_output(c);
    io::write_text(out, j.dump(2) + "\n");
    m.outputs = {out};
  }
  return 0;
}

int cmd_vcm_encode(const PipelineConfig& c, Manifest& m) {
  pipeline::require_path(c.images, "images", true);
  const std::string ann_path = c.predictions.empty() ? c.annotations : c.predictions;
  pipeline::require_path(ann_path, c.predictions.empty() ? "annotations" : "predictions", false);
  const fs::path out = require_output(c);
  fs::create_directories(out);
  const Task task = parse_task(c.task);
  vcm::ReferenceSource src = vcm::InternalReference{};
  if (!c.references.empty()) {
    pipeline::require_path(c.references, "references", true);
    src = vcm::ExternalReferences{c.references};
  }
  const auto anns = annotation::read_annotations(ann_path);
  pipeline::ImageCache images(c.images);
  const auto cands = pipeline::candidates_for(c, task);
  nlohmann::ordered_json summary;
  summary["task"] = std::string(task_name(task));
  summary["delta_qf"] = c.delta_qf;
  auto arr = nlohmann::ordered_json::array();
  m.inputs = {ann_path, c.images};
  for (const auto& [id, objs] : pipeline::by_image(anns)) {
    const ImagePlane& img = images.get(id);
    const auto res = vcm::vcm_encode(pipeline::make_job(img, id, task, objs, c.delta_qf, c.background_qf), cands,
                                     src, c.threads);
    const fs::path f = out / (id + ".jpg");
    io::write_file(f, res.stream.bytes);
    m.outputs.push_back(f);
    arr.push_back({{"image_id", id}, {"bpp", res.bpp}, {"searched_qf", res.searched_qf},
                   {"applied_qf", res.applied_qf}, {"target_psnr", res.targets}});
    log(Level::Info, id + ": " + fmt("%.4f", res.bpp) + " bpp");
  }
  summary["images"] = arr;
  const fs::path sf = out / "summary.json";
  io::write_text(sf, summary.dump(2) + "\n");
  m.outputs.push_back(sf);
  return 0;
}

int cmd_train(const PipelineConfig& c, std::optional<int> toy, Manifest& m) {
  const auto out = require_output(c);
  std::vector<predictor::Sample> data;
  if (toy) {
    if (*toy < 1) throw ValidationError("toy", "must be positive");
    data = predictor::samples_of(predictor::toy_dataset(static_cast<std::size_t>(*toy), c.model.image_size, c.seed));
  } else {
    pipeline::require_path(c.annotations, "annotations", false);
    pipeline::require_path(c.images, "images", true);
    pipeline::ImageCache images(c.images);
    data = pipeline::training_samples(annotation::read_annotations(c.annotations), images, c.model.image_size);
    m.inputs = {c.annotations, c.images};
  }
  predictor::TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.lr = c.lr;
  tc.sigma = c.sigma;
  tc.hflip = c.hflip;
  tc.seed = c.seed;
  const auto res = predictor::train(data, c.model, tc, [](int e, double l) {
    log(Level::Info, "epoch " + std::to_string(e) + " loss " + fmt("%.6f", l));
  });
  predictor::save_checkpoint(out, res.model);
  const fs::path trace = out.string() + ".loss.csv";
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) csv += std::to_string(e) + "," + fmt("%.17g", res.epoch_loss[e]) + "\n";
  io::write_text(trace, csv);
  m.outputs = {out, trace};
  return 0;
}

int cmd_predict(const PipelineConfig& c, const std::string& model_path, Manifest& m) {
  pipeline::require_path(model_path, "model", false);
  pipeline::require_path(c.annotations, "annotations", false);
  pipeline::require_path(c.images, "images", true);
  const auto out = require_output(c);
  const auto model = predictor::load_checkpoint<float>(model_path);
  pipeline::ImageCache images(c.images);
  const auto preds = pipeline::predict_annotations(model, annotation::read_annotations(c.annotations), images,
                                                   pipeline::predict_mode(c));
  write_annotations_out(out, preds, c);
  m.inputs = {model_path, c.annotations, c.images};
  m.outputs = {out};
  return 0;
}

int cmd_grad_check(const PipelineConfig& c, const std::string& model_path, std::size_t per_group) {
  predictor::Model<double> model =
      model_path.empty() ? predictor::Model<double>(c.model) : predictor::load_checkpoint<double>(model_path);
  const auto& cfg = model.config();
  auto items = predictor::toy_dataset(1, std::max(32, cfg.image_size), c.seed);
  predictor::Sample s = items[0].sample;
  s.image = predictor::prepare_input(items[0].image, BoundingBox(0, 0, items[0].image.width(), items[0].image.height()),
                                     cfg.image_size);
  const auto rep = predictor::grad_check(model, s, c.sigma, 1e-5, per_group);
  for (const auto& g : rep.groups) std::cout << g.name << " " << fmt("%.3e", g.relative_error) << "\n";
  std::cout << "max_relative_error " << fmt("%.3e", rep.max_relative_error) << "\n";
  return rep.max_relative_error <= 1e-4 ? 0 : 1;
}

int cmd_evaluate(const PipelineConfig& c, Manifest& m) {
  pipeline::require_path(c.annotations, "annotations", false);
  pipeline::require_path(c.predictions, "predictions", false);
  pipeline::require_path(c.images, "images", true);
  const auto out = require_output(c);
  vcm::ReferenceSource src = vcm::InternalReference{};
  if (!c.references.empty()) {
    pipeline::require_path(c.references, "references", true);
    src = vcm::ExternalReferences{c.references};
  }
  const auto gt = annotation::read_annotations(c.annotations);
  const auto pred = annotation::read_annotations(c.predictions);
  pipeline::ImageCache images(c.images);
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  auto tasks = nlohmann::ordered_json::array();
  std::string csv = "task,count,E_A,E_27_51,sigma_e,mean_abs_dpsnr,mean_abs_dssim,r2_psnr,r2_ssim\n";
  for (Task t : kAllTasks) {
    const auto ev = pipeline::evaluate_task(gt, pred, t, images, c, src);
    tasks.push_back(pipeline::to_json(ev));
    if (ev.errors && ev.quality) {
      csv += std::string(task_name(t)) + "," + std::to_string(ev.errors->count) + "," + fmt("%.6f", ev.errors->e_a) +
             "," + (ev.errors->e_range ? fmt("%.6f", *ev.errors->e_range) : "") + "," +
             fmt("%.6f", ev.errors->sigma_e) + "," + fmt("%.6f", ev.quality->mean_abs_dpsnr) + "," +
             fmt("%.6f", ev.quality->mean_abs_dssim) + "," + fmt("%.6f", ev.quality->r2_psnr) + "," +
             fmt("%.6f", ev.quality->r2_ssim) + "\n";
    }
  }
  j["tasks"] = tasks;
  io::write_text(out, j.dump(2) + "\n");
  const fs::path csv_path = out.string() + ".csv";
  io::write_text(csv_path, csv);
  m.inputs = {c.annotations, c.predictions, c.images};
  m.outputs = {out, csv_path};
  return 0;
}

evaluation::RateAccuracyCurve load_curve(const std::string& path, Task task) {
  pipeline::require_path(path, "curve", false);
  const auto bytes = io::read_file(path);
  return evaluation::curve_from_csv(std::string(bytes.begin(), bytes.end()), fs::path(path).stem().string(), task, path);
}

int cmd_bd_metric(const PipelineConfig& c, const std::string& ref, const std::string& test) {
  const Task task = parse_task(c.task);
  const double d = evaluation::bd_metric(load_curve(ref, task), load_curve(test, task));
  std::cout << fmt("%.2f", d) << "\n";
  return 0;
}

int cmd_report(const PipelineConfig& c, const std::vector<std::string>& curves, Manifest& m) {
  const auto out = require_output(c);
  const Task task = parse_task(c.task);
  std::vector<evaluation::RateAccuracyCurve> cs;
  for (const auto& p : curves) {
    cs.push_back(load_curve(p, task));
    m.inputs.push_back(p);
  }
  io::write_text(out, evaluation::curves_to_svg(cs, std::string(task_name(task))));
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["reference"] = cs.front().label;
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 1; i < cs.size(); ++i) arr.push_back({{"label", cs[i].label}, {"bd_map", evaluation::bd_metric(cs.front(), cs[i])}});
  j["bd_map"] = arr;
  auto curves_json = nlohmann::ordered_json::array();
  for (const auto& cv : cs) curves_json.push_back(evaluation::curve_to_json(cv));
  j["curves"] = curves_json;
  const fs::path jf = out.string() + ".json";
  io::write_text(jf, j.dump(2) + "\n");
  m.outputs = {out, jf};
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtjrd: multi-task JRD annotation, prediction and machine-oriented coding"};
  app.set_version_flag("--version", pipeline::kToolVersion);
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON config file (flags take precedence)");
    s->add_flag("--print-config", f.print_config, "Print the resolved config and exit");
    s->add_option("--threads", f.threads, "Worker threads (default: all cores)");
    s->add_option("--seed", f.seed, "Seed for all randomness");
    s->add_option("-o,--output", f.output, "Output path");
    s->add_option("--task", f.task, "Task: od, is or kpd");
  };

  auto* annotate = app.add_subcommand("annotate", "Build JRD annotations from detector responses");
  auto* stats = app.add_subcommand("stats", "Dataset statistics and threshold sweep");
  auto* encode = app.add_subcommand("encode", "Encode an image at a uniform or regional quality factor");
  auto* decode = app.add_subcommand("decode", "Decode a stream to PNG/PNM");
  auto* qfsearch = app.add_subcommand("qf-search", "Find the quality factor matching a region's target PSNR");
  auto* vcmenc = app.add_subcommand("vcm-encode", "JRD-driven machine-oriented encoding");
  auto* train = app.add_subcommand("train", "Train the predictor");
  auto* predict = app.add_subcommand("predict", "Predict JRDs for annotated objects");
  auto* gradcheck = app.add_subcommand("grad-check", "Finite-difference gradient check");
  auto* evaluate = app.add_subcommand("evaluate", "Compare predicted against ground-truth JRDs");
  auto* bdmetric = app.add_subcommand("bd-metric", "BD-mAP between two rate-accuracy CSVs");
  auto* report = app.add_subcommand("report", "SVG plot and BD summary for rate-accuracy CSVs");
  for (auto* s : {annotate, stats, encode, decode, qfsearch, vcmenc, train, predict, gradcheck, evaluate, bdmetric, report})
    common(s);

  for (auto* s : {annotate, stats}) {
    s->add_option("--responses", f.responses, "Response directory");
    s->add_option("--window", f.window, "Zero-run window W");
    s->add_option("--min-kp-area", f.min_kp_area, "Minimum keypoint object area");
    s->add_option("--class", f.class_filter, "Keep only this class id");
  }
  annotate->add_option("--threshold", f.threshold, "Similarity threshold T");
  stats->add_option("--annotations", f.annotations, "Annotations JSON");

  std::string image, input, box, model_path;
  std::optional<int> qf, jrd, toy;
  std::optional<double> target;
  std::vector<std::string> regions, curve_files;
  std::size_t per_group = 0;

  encode->add_option("--image", image, "Input image")->required();
  encode->add_option("--qf", qf, "Uniform quality factor (background when regions are given)");
  encode->add_option("--region", regions, "x,y,w,h:qf (repeatable)");
  decode->add_option("--input", input, "Input stream")->required();

  qfsearch->add_option("--image", image, "Input image")->required();
  qfsearch->add_option("--box", box, "x,y,w,h")->required();
  qfsearch->add_option("--target", target, "Target region PSNR (dB)");
  qfsearch->add_option("--jrd", jrd, "JRD whose reference gives the target");
  qfsearch->add_option("--references", f.references, "External reference directory");

  for (auto* s : {qfsearch, vcmenc, evaluate})
    s->add_option("--candidates", f.candidates, "Candidate quality factors")->delimiter(',');
  for (auto* s : {vcmenc, evaluate}) {
    s->add_option("--images", f.images, "Image directory");
    s->add_option("--annotations", f.annotations, "Ground-truth annotations JSON");
    s->add_option("--predictions", f.predictions, "Predicted annotations JSON");
    s->add_option("--references", f.references, "External reference directory");
    s->add_option("--background-qf", f.background_qf, "Background quality factor");
  }
  vcmenc->add_option("--delta-qf", f.delta_qf, "Quality offset applied to searched QFs");
  evaluate->add_option("--delta-ladder", f.delta_ladder, "Offsets for the rate sweep")->delimiter(',');

  train->add_option("--annotations", f.annotations, "Annotations JSON");
  train->add_option("--images", f.images, "Image directory");
  train->add_option("--toy", toy, "Train on N synthetic toy samples instead");
  train->add_option("--epochs", f.epochs, "Epochs");
  train->add_option("--batch-size", f.batch_size, "Mini-batch size");
  train->add_option("--lr", f.lr, "Initial learning rate");
  train->add_option("--sigma", f.sigma, "Soft-label standard deviation");
  train->add_flag("--hflip", f.hflip, "Random horizontal flips");

  predict->add_option("--model", model_path, "Checkpoint")->required();
  predict->add_option("--annotations", f.annotations, "Annotations JSON (objects to predict)");
  predict->add_option("--images", f.images, "Image directory");
  predict->add_option("--mode", f.predict_mode, "argmax or expectation");

  gradcheck->add_option("--model", model_path, "Checkpoint (default: seeded initialization)");
  gradcheck->add_option("--per-group", per_group, "Elements checked per group (0 = all)");

  bdmetric->add_option("reference", input, "Reference curve CSV")->required();
  bdmetric->add_option("test", image, "Test curve CSV")->required();
  report->add_option("curves", curve_files, "Curve CSVs; the first is the reference")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    const PipelineConfig c = resolve(f);
    if (f.print_config) {
      std::cout << pipeline::to_json(c).dump(2) << "\n";
      return 0;
    }
    Manifest m{name, pipeline::to_json(c), {}, {}};
    m.config.erase("threads");  // parallelism does not change results
    int rc = 0;
    if (name == "annotate") rc = cmd_annotate(c, m);
    else if (name == "stats") rc = cmd_stats(c, m);
    else if (name == "encode") rc = cmd_encode(c, image, qf, regions, m);
    else if (name == "decode") rc = cmd_decode(c, input, m);
    else if (name == "qf-search") rc = cmd_qf_search(c, image, box, target, jrd, m);
    else if (name == "vcm-encode") rc = cmd_vcm_encode(c, m);
    else if (name == "train") rc = cmd_train(c, toy, m);
    else if (name == "predict") rc = cmd_predict(c, model_path, m);
    else if (name == "grad-check") return cmd_grad_check(c, model_path, per_group);
    else if (name == "evaluate") rc = cmd_evaluate(c, m);
    else if (name == "bd-metric") return cmd_bd_metric(c, input, image);
    else if (name == "report") rc = cmd_report(c, curve_files, m);
    if (rc == 0 && !c.output.empty()) m.write(c.output);
    return rc;
  } catch (const ValidationError& e) {
    std::cerr << "error: invalid config: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << "\n";
    return 1;
  } catch (const codec::DecodeError& e) {
    std::cerr << "error: decode: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
