// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "mtjrd/codec.hpp"
#include "mtjrd/evaluation.hpp"
#include "mtjrd/hash.hpp"
#include "mtjrd/metrics.hpp"
#include "mtjrd/predictor.hpp"
#include "mtjrd/vcm.hpp"
#include "support.hpp"

using namespace mtjrd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s  %2d  %-34s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += !o.pass;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

const char* kCorpus[] = {"astronaut", "camera", "chelsea", "coffee", "coins",
                         "immunohistochemistry", "moon", "page", "rocket", "text"};

ImagePlane corpus(std::size_t i) {
  return io::read_image(test_support::data_path(std::string("corpus/") + kCorpus[i % 10] + ".ppm"));
}

BoundingBox random_box(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  const double bw = 16 + u(rng) * (w / 2.0), bh = 16 + u(rng) * (h / 2.0);
  return BoundingBox(u(rng) * (w - bw), u(rng) * (h - bh), bw, bh);
}

// ---------------------------------------------------------------------------

Outcome c1_jrd_oracle() {
  std::mt19937_64 rng(2024);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    LabelSequence s;
    std::bernoulli_distribution b((trial % 10 + 1) / 11.0);
    for (auto& l : s.labels) l = b(rng);
    for (int w = 1; w <= 5; ++w) mismatches += annotation::jrd_from_labels(s, w) != test_support::jrd_oracle(s.labels, w);
  }
  return {mismatches == 0, fmt("%.0f mismatches over 10000 x 5", mismatches)};
}

Outcome c2_label_truth_table() {
  struct Row {
    int cls;
    double conf, sim;
    bool expect;
  };
  const Row rows[] = {{1, 0.9, 0.9, true},   {2, 0.9, 0.9, false},  {1, 0.7, 0.9, false},  {1, 0.9, 0.7, false},
                      {1, 0.75, 0.9, false}, {1, 0.9, 0.75, false}, {1, 0.75, 0.75, false}, {2, 0.7, 0.7, false}};
  int ok = 0;
  for (const auto& r : rows) ok += annotation::make_label(QualityTriple(r.cls, r.conf, r.sim), 1, 0.75) == r.expect;
  return {ok == 8, fmt("%.0f/8 rows", ok)};
}

Outcome c3_threshold_monotonicity() {
  const auto traces = test_support::synthetic_traces(200, 77);
  std::vector<std::vector<JrdAnnotation>> per_t;
  for (double T : annotation::kSweepThresholds) per_t.push_back(annotation::annotate_traces(traces, T, 3));
  int violations = 0;
  for (std::size_t k = 1; k < per_t.size(); ++k)
    for (std::size_t i = 0; i < traces.size(); ++i)
      for (Task t : kAllTasks) violations += per_t[k][i].jrd_for(t).value_or(-1) > per_t[k - 1][i].jrd_for(t).value_or(-1);
  const auto sweep = annotation::threshold_sweep(traces, annotation::kSweepThresholds, 3);
  int mean_violations = 0;
  for (std::size_t k = 1; k < sweep.size(); ++k)
    for (Task t : kAllTasks) mean_violations += sweep[k].mean.at(t).value_or(0) > sweep[k - 1].mean.at(t).value_or(0);
  return {violations == 0 && mean_violations == 0,
          fmt("object violations %.0f, mean violations %.0f, OD mean %.2f at T=0.65", violations, mean_violations,
              sweep.front().mean.at(Task::OD).value_or(0))};
}

Outcome c4_metric_identities() {
  const BoundingBox b(3, 4, 20, 10);
  Mask m(16, 16);
  for (int y = 2; y < 9; ++y)
    for (int x = 3; x < 12; ++x) m.set(x, y, true);
  std::vector<Keypoint> pts(17);
  for (int i = 0; i < 17; ++i) pts[i] = {10.0 + i, 20.0 - i, 2};
  const KeypointSet kp(pts, 400);
  const auto img = test_support::regression_image();
  bool ok = metrics::box_iou(b, b).value() == 1.0 && metrics::mask_iou(m, m).value() == 1.0 &&
            metrics::oks(kp, kp).value() == 1.0 && std::abs(metrics::ssim(img, img) - 1.0) < 1e-12;
  std::vector<Keypoint> one(17), moved(17);
  const double k0 = metrics::kCocoKeypointConstants[0];
  one[0] = {50, 50, 2};
  moved[0] = {50 + std::sqrt(2 * 400 * k0 * k0), 50, 2};
  const double o = metrics::oks(KeypointSet(one, 400), KeypointSet(moved, 400)).value();
  const double p = metrics::psnr_from_mse(1.0);
  ok = ok && std::abs(o - std::exp(-1.0)) <= 1e-6 && std::abs(p - 48.1308) <= 1e-3;
  return {ok, fmt("OKS %.7f, PSNR(MSE=1) %.4f dB", o, p)};
}

Outcome c5_codec_regression() {
  const auto img = test_support::regression_image();
  const int qfs[] = {30, 50, 75, 90};
  const double frozen[] = {31.703, 33.313, 35.285, 38.103};
  bool ok = true;
  double prev_bpp = 0;
  std::string detail;
  for (int i = 0; i < 4; ++i) {
    const auto s = codec::encode_uniform(img, qfs[i]);
    const double p = metrics::psnr(img, codec::decode(s));
    const double bpp = codec::measure_rate(s, img.width(), img.height());
    ok = ok && std::abs(p - frozen[i]) <= 0.05 && bpp > prev_bpp;
    prev_bpp = bpp;
    // baseline: SOF0 present, no progressive/extended frame markers
    bool sof0 = false;
    for (std::size_t k = 0; k + 1 < s.bytes.size(); ++k) {
      if (s.bytes[k] != 0xFF) continue;
      if (s.bytes[k + 1] == 0xC0) sof0 = true;
      if (s.bytes[k + 1] == 0xC1 || s.bytes[k + 1] == 0xC2) ok = false;
      if (s.bytes[k + 1] == 0xDA) break;
    }
    ok = ok && sof0 && codec::parse(s).qf_map->is_uniform();
    detail += fmt("q%.0f %.3fdB/%.3fbpp ", qfs[i], p, bpp);
  }
  return {ok, detail};
}

Outcome c6_adaptive_dominance() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> u(0, 255);
    ImagePlane img(128, 128, 3);
    // low-pass noise texture
    std::vector<double> field(128 * 128 * 3);
    for (auto& v : field) v = u(rng);
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x)
        for (int c = 0; c < 3; ++c) {
          double s = 0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = std::clamp(x + dx, 0, 127), yy = std::clamp(y + dy, 0, 127);
              s += field[(static_cast<std::size_t>(yy) * 128 + xx) * 3 + c];
              ++n;
            }
          img.at(x, y, c) = static_cast<std::uint8_t>(s / n);
        }
    const BoundingBox center(32, 32, 64, 64);
    const auto map = codec::rasterize_qfmap(std::vector<codec::QfRegion>{{center, 95}}, 30, 128, 128);
    const auto rec = codec::decode(codec::encode(img, map));
    double in = 0, out = 0;
    std::size_t nin = 0, nout = 0;
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x) {
        const bool inside = x >= 32 && x < 96 && y >= 32 && y < 96;
        for (int c = 0; c < 3; ++c) {
          const double d = double(img.at(x, y, c)) - rec.at(x, y, c);
          (inside ? in : out) += d * d;
          ++(inside ? nin : nout);
        }
      }
    in /= double(nin);
    out /= double(nout);
    wins += in < out;
    detail += fmt("%.1f<%.1f ", in, out);
  }
  return {wins == 5, fmt("%.0f/5 seeds; in/out MSE: ", wins) + detail};
}

Outcome c7_search_correctness() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  int agree = 0, bound_ok = 0, monotone = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto img = corpus(static_cast<std::size_t>(trial));
    const auto box = random_box(rng, img.width(), img.height());
    vcm::QfCandidates cands = trial % 3 == 0 ? vcm::od_is_candidates() : vcm::kpd_candidates();
    if (trial % 3 == 2) {
      std::vector<int> v;
      for (int q = 5 + static_cast<int>(u(rng) * 10); q <= 100; q += 3 + static_cast<int>(u(rng) * 12)) v.push_back(q);
      cands = vcm::QfCandidates(v);
    }
    const double target = 24 + 18 * u(rng);
    const auto r = vcm::search_qf_detailed(img, box, target, cands);
    // exhaustive oracle
    vcm::RegionProbe probe(img, box);
    int best = cands[0];
    double best_d = std::abs(probe.psnr(cands[0]) - target);
    for (std::size_t i = 1; i < cands.size(); ++i) {
      const double d = std::abs(probe.psnr(cands[i]) - target);
      if (d < best_d) {
        best_d = d;
        best = cands[i];
      }
    }
    agree += r.qf == best;
    if (!r.exhaustive) {
      ++monotone;
      bound_ok += r.probes <= static_cast<std::size_t>(std::ceil(std::log2(double(cands.size())))) + 2;
    }
  }
  return {agree == 30 && bound_ok == monotone,
          fmt("%.0f/30 equal the oracle; probe bound held in %.0f/%.0f monotone trials", agree, bound_ok, monotone)};
}

Outcome c8_vcm_self_consistency() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> jd(28, 46);
  int hits = 0;
  for (int trial = 0; trial < 30; ++trial) {
    vcm::VcmJob job;
    job.image = corpus(static_cast<std::size_t>(trial));
    job.image_id = kCorpus[trial % 10];
    const int j = jd(rng);
    job.objects.push_back({random_box(rng, job.image.width(), job.image.height()), j, std::nullopt});
    const auto res = vcm::vcm_encode(job, vcm::QfCandidates::range(1, 100));
    const int want = vcm::qp_to_qf(j), got = res.searched_qf[0];
    vcm::RegionProbe probe(job.image, job.objects[0].box);
    hits += got == want || (got < want && probe.psnr(got) == probe.psnr(want));
  }
  return {hits >= 28, fmt("%.0f/30 recovered", hits)};
}

Outcome c9_grad_check() {
  double worst = 0;
  std::size_t checked = 0, groups = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    predictor::ModelConfig cfg;
    cfg.seed = seed;
    const auto item = predictor::toy_dataset(1, cfg.image_size, seed + 100);
    const auto rep = predictor::grad_check(predictor::Model<double>(cfg), item[0].sample, 3.0, 1e-5, 48);
    worst = std::max(worst, rep.max_relative_error);
    groups = rep.groups.size();
    for (const auto& g : rep.groups) checked += g.checked;
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over %.0f groups (%.0f elements, 3 seeds)", worst, double(groups), double(checked))};
}

Outcome c10_gdsl() {
  bool ok = true;
  double worst_sum = 0;
  for (int j = 0; j < 64; ++j) {
    const auto t = predictor::gdsl_targets(j, 3.0);
    const double s = std::accumulate(t.probs.begin(), t.probs.end(), 0.0);
    worst_sum = std::max(worst_sum, std::abs(s - 1));
    ok = ok && std::abs(s - 1) <= 1e-9 && std::max_element(t.probs.begin(), t.probs.end()) - t.probs.begin() == j;
  }
  const double peak = predictor::gdsl_targets(32, 3.0).probs[32];
  ok = ok && std::abs(peak - 0.13300) <= 1e-4;
  return {ok, fmt("peak %.5f, max |sum-1| %.1e", peak, worst_sum)};
}

Outcome c11_toy_overfit() {
  // hand-checked error fixtures
  const std::vector<int> pred = {10, 30, 40, 63}, gt = {12, 30, 45, 50};
  const auto f = predictor::error_metrics(pred, gt);
  const bool fixtures_ok = f.e_a == 5.0 && f.e_range && *f.e_range == 6.0 && f.sigma_e == std::sqrt(47.25);

  const auto t0 = std::chrono::steady_clock::now();
  predictor::ModelConfig cfg;
  cfg.seed = 11;
  const auto items = predictor::toy_dataset(32, cfg.image_size, 11);
  const auto data = predictor::samples_of(items);
  predictor::TrainConfig tc;
  tc.seed = 11;
  const auto res = predictor::train(data, cfg, tc);
  std::vector<int> p, g;
  for (const auto& s : data) {
    const auto out = predictor::predict(res.model, s.image, s.attrs);
    for (int t = 0; t < kNumTasks; ++t) {
      p.push_back(out[t]);
      g.push_back(*s.jrd[t]);
    }
  }
  const auto rep = predictor::error_metrics(p, g);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {fixtures_ok && rep.e_a < 1.0 && secs < 60,
          fmt("E_A %.3f after 200 epochs in %.1fs; sigma_e %.3f", rep.e_a, secs, rep.sigma_e) +
              (fixtures_ok ? "; fixtures exact" : "; fixtures WRONG")};
}

Outcome c12_bd_machinery() {
  auto curve = [](std::vector<double> b, std::vector<double> a) {
    evaluation::RateAccuracyCurve c{"c", Task::OD, {}};
    for (std::size_t i = 0; i < b.size(); ++i) c.points.push_back({b[i], a[i]});
    return c;
  };
  const auto ref = curve({0.1, 0.2, 0.4, 0.8}, {0.30, 0.45, 0.55, 0.60});
  const auto up = curve({0.1, 0.2, 0.4, 0.8}, {0.32, 0.47, 0.57, 0.62});
  const auto test = curve({0.08, 0.15, 0.33, 0.7}, {0.28, 0.44, 0.57, 0.63});
  const double same = evaluation::bd_metric(ref, ref), shift = evaluation::bd_metric(ref, up);
  const double bd = evaluation::bd_metric(ref, test), oracle = test_support::bd_oracle(ref, test);
  return {same == 0.0 && std::abs(shift - 2.0) <= 1e-9 && std::abs(bd - oracle) <= 0.05,
          fmt("identical %.1f, shift %.12f, pair %.4f vs oracle ", same, shift, bd) + fmt("%.4f", oracle)};
}

int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(MTJRD_CLI) + "' " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::map<std::string, std::string> pipeline_hashes(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string fx = test_support::data_path("../fixtures");
  const std::string common = " --seed 3 --threads 2";
  const std::vector<std::string> steps = {
      "annotate --responses " + fx + "/responses -o ann.json" + common,
      "train --annotations ann.json --images " + fx + "/images --epochs 20 -o model.bin" + common,
      "predict --model model.bin --annotations ann.json --images " + fx + "/images -o pred.json" + common,
      "vcm-encode --images " + fx + "/images --annotations ann.json --task od -o vcm" + common,
      "evaluate --images " + fx + "/images --annotations ann.json --predictions pred.json --task od -o eval" + common,
  };
  for (const auto& s : steps)
    if (run(dir, s) != 0) throw std::runtime_error("pipeline step failed: " + s);
  std::map<std::string, std::string> h;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) h[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return h;
}

Outcome c13_determinism() {
  const auto base = fs::temp_directory_path() / "mtjrd_acceptance";
  const auto a = pipeline_hashes(base / "run1"), b = pipeline_hashes(base / "run2");
  return {a == b && a.size() >= 10, fmt("%.0f output files, hashes ", double(a.size())) + (a == b ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  criterion(1, "JRD extraction oracle equivalence", c1_jrd_oracle);
  criterion(2, "label rule truth table", c2_label_truth_table);
  criterion(3, "threshold monotonicity", c3_threshold_monotonicity);
  criterion(4, "metric identities", c4_metric_identities);
  criterion(5, "codec conformance and quality", c5_codec_regression);
  criterion(6, "adaptive quantization dominance", c6_adaptive_dominance);
  criterion(7, "QF search correctness", c7_search_correctness);
  criterion(8, "VCM self-consistency", c8_vcm_self_consistency);
  criterion(9, "predictor gradient check", c9_grad_check);
  criterion(10, "GDSL contract", c10_gdsl);
  criterion(11, "toy overfit", c11_toy_overfit);
  criterion(12, "BD-mAP machinery", c12_bd_machinery);
  criterion(13, "end-to-end determinism", c13_determinism);
  std::printf("%d/13 criteria passed\n", 13 - failures);
  return failures;
}
