#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "mtjrd/annotation.hpp"
#include "support.hpp"

using namespace mtjrd;
using namespace mtjrd::annotation;
namespace fs = std::filesystem;

namespace {

LabelSequence seq_from(const std::string& bits) {
  LabelSequence s;
  for (std::size_t i = 0; i < 64; ++i) s.labels[i] = i < bits.size() ? static_cast<std::uint8_t>(bits[i] == '1') : 0;
  return s;
}

LabelSequence ones_then(int n_ones) {
  LabelSequence s;
  for (int i = 0; i < 64; ++i) s.labels[i] = i < n_ones ? 1 : 0;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump();
}

nlohmann::json od_file(const std::string& image, nlohmann::json qp, std::vector<std::array<double, 4>> boxes,
                       double conf = 0.9) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& b : boxes) dets.push_back({{"class_id", 1}, {"confidence", conf}, {"box", b}});
  nlohmann::json j{{"image_id", image}, {"qp", qp}, {"task", "od"}, {"detections", dets}};
  if (qp.is_string()) {
    j["width"] = 100;
    j["height"] = 80;
  }
  return j;
}

}  // namespace

TEST(JrdFromLabels, MatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  int mismatches = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    LabelSequence s;
    const double p = (trial % 10 + 1) / 11.0;
    std::bernoulli_distribution b(p);
    for (auto& l : s.labels) l = b(rng);
    for (int w = 1; w <= 5; ++w) mismatches += jrd_from_labels(s, w) != test_support::jrd_oracle(s.labels, w);
  }
  EXPECT_EQ(mismatches, 0);
}

TEST(JrdFromLabels, Examples) {
  EXPECT_EQ(jrd_from_labels(ones_then(64), 3), 63);
  EXPECT_EQ(jrd_from_labels(ones_then(0), 3), -1);
  EXPECT_EQ(jrd_from_labels(ones_then(20), 3), 19);
  EXPECT_EQ(jrd_from_labels(ones_then(62), 3), 61);  // clipped window of zeros at the end
  // isolated dips shorter than W are ignored
  EXPECT_EQ(jrd_from_labels(seq_from("1111011001111111000"), 3), 15);
  EXPECT_EQ(jrd_from_labels(seq_from("1111011001111111000"), 1), 3);
  EXPECT_EQ(jrd_from_labels(seq_from("1111011001111111000"), 2), 6);
  LabelSequence last;
  last.labels.fill(1);
  last.labels[63] = 0;
  EXPECT_EQ(jrd_from_labels(last, 3), 62);
  last.labels[63] = 1;
  last.labels[62] = 0;
  EXPECT_EQ(jrd_from_labels(last, 3), 63);  // zero followed by a one: no window
  EXPECT_THROW(jrd_from_labels(last, 0), InvalidArgument);
}

TEST(MakeLabel, TruthTableAroundThreshold) {
  const double T = 0.75;
  struct Row {
    int cls;
    double conf, sim;
    bool expect;
  };
  const Row rows[] = {
      {1, 0.9, 0.9, true},  {2, 0.9, 0.9, false}, {1, 0.7, 0.9, false}, {1, 0.9, 0.7, false},
      {1, 0.75, 0.9, false}, {1, 0.9, 0.75, false}, {1, 0.75, 0.75, false}, {2, 0.7, 0.7, false},
  };
  for (const auto& r : rows) EXPECT_EQ(make_label(QualityTriple(r.cls, r.conf, r.sim), 1, T), r.expect);
  EXPECT_THROW(QualityTriple(1, 1.2, 0.5), InvalidArgument);
}

TEST(MatchResponse, PicksMostSimilarFirstOnTies) {
  TaskResponse orig(Task::OD, 1, 1.0, BoundingBox(0, 0, 10, 10));
  std::vector<TaskResponse> c = {TaskResponse(Task::OD, 1, 0.9, BoundingBox(5, 0, 10, 10)),
                                 TaskResponse(Task::OD, 2, 0.9, BoundingBox(1, 0, 10, 10)),
                                 TaskResponse(Task::OD, 1, 0.9, BoundingBox(-1, 0, 10, 10))};
  const auto m = match_response(orig, c);
  ASSERT_TRUE(m.index);
  EXPECT_EQ(*m.index, 1u);
  EXPECT_FALSE(match_response(orig, {}).index);
}

TEST(Responses, GoldenFixtureMatchesOracle) {
  const auto dir = test_support::data_path("../fixtures");
  BuildOptions opt;
  const auto anns = build_annotations(dir + "/responses", opt);
  const auto text = annotations_to_json(anns, opt.threshold, opt.window);
  const auto golden = io::read_file(dir + "/golden_annotations.json");
  EXPECT_EQ(text, std::string(golden.begin(), golden.end()));
  // parallel tracing gives the same result
  opt.threads = 4;
  EXPECT_EQ(build_annotations(dir + "/responses", opt), anns);
  // the file reads back identically
  EXPECT_EQ(read_annotations(dir + "/golden_annotations.json"), anns);
}

TEST(Responses, MissingLevelNamesImageTaskAndLevel) {
  const auto d = fresh_dir("mtjrd_resp_missing");
  write_json(d / "orig.json", od_file("im1", "orig", {{10, 10, 30, 30}}));
  for (int q = 0; q < 64; ++q)
    if (q != 17) write_json(d / ("q" + std::to_string(q) + ".json"), od_file("im1", q, {{10, 10, 30, 30}}));
  try {
    load_responses(d);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("im1"), std::string::npos);
    EXPECT_NE(msg.find("od"), std::string::npos);
    EXPECT_NE(msg.find("q=17"), std::string::npos);
  }
}

TEST(Responses, MalformedAndDuplicateFilesRaiseParseError) {
  auto d = fresh_dir("mtjrd_resp_bad");
  std::ofstream(d / "x.json") << "{ not json";
  EXPECT_THROW(load_responses(d), ParseError);
  d = fresh_dir("mtjrd_resp_dup");
  write_json(d / "a.json", od_file("im1", 3, {}));
  write_json(d / "b.json", od_file("im1", 3, {}));
  EXPECT_THROW(load_responses(d), ParseError);
  d = fresh_dir("mtjrd_resp_range");
  write_json(d / "a.json", od_file("im1", 64, {}));
  EXPECT_THROW(load_responses(d), ParseError);
}

TEST(Responses, ObjectRecognizedThroughoutGets63AndVanishingGetsDropped) {
  const auto d = fresh_dir("mtjrd_resp_full");
  write_json(d / "orig.json", od_file("im1", "orig", {{10, 10, 30, 30}}));
  for (int q = 0; q < 64; ++q) {
    // stays put; confidence falls below T from q = 40 on
    write_json(d / ("q" + std::to_string(q) + ".json"), od_file("im1", q, {{10, 10, 30, 30}}, q < 40 ? 0.9 : 0.5));
  }
  auto anns = build_annotations(d, BuildOptions{});
  ASSERT_EQ(anns.size(), 1u);
  EXPECT_EQ(anns[0].jrd_for(Task::OD), 39);
  EXPECT_EQ(anns[0].attrs, attribute_triplet(BoundingBox(10, 10, 30, 30), 100, 80));

  for (int q = 0; q < 64; ++q) write_json(d / ("q" + std::to_string(q) + ".json"), od_file("im1", q, {{10, 10, 30, 30}}));
  anns = build_annotations(d, BuildOptions{});
  EXPECT_EQ(anns[0].jrd_for(Task::OD), 63);

  for (int q = 0; q < 64; ++q) write_json(d / ("q" + std::to_string(q) + ".json"), od_file("im1", q, {}));
  anns = build_annotations(d, BuildOptions{});
  ASSERT_EQ(anns.size(), 1u);
  EXPECT_FALSE(anns[0].jrd_for(Task::OD));  // JRD -1: excluded for the task
}

TEST(ThresholdSweep, NonIncreasingPerObjectAndMean) {
  const auto traces = test_support::synthetic_traces(200, 5);
  std::vector<std::vector<JrdAnnotation>> per_t;
  for (double T : kSweepThresholds) per_t.push_back(annotate_traces(traces, T, 3));
  for (std::size_t k = 1; k < per_t.size(); ++k)
    for (std::size_t i = 0; i < traces.size(); ++i)
      for (Task t : kAllTasks)
        EXPECT_LE(per_t[k][i].jrd_for(t).value_or(-1), per_t[k - 1][i].jrd_for(t).value_or(-1));
  const auto sweep = threshold_sweep(traces, kSweepThresholds, 3);
  for (std::size_t k = 1; k < sweep.size(); ++k)
    for (Task t : kAllTasks) EXPECT_LE(sweep[k].mean.at(t).value_or(0), sweep[k - 1].mean.at(t).value_or(0));
}

TEST(Stats, HistogramDecilesAndGrid) {
  std::vector<JrdAnnotation> anns;
  for (int i = 0; i < 20; ++i) {
    JrdAnnotation a;
    a.image_id = "x";
    a.object_id = i;
    a.box = BoundingBox(0, 0, 10 + i, 10);
    a.attrs = AttributeTriplet((i + 1) / 100.0, i < 10 ? 0.1 : 0.9, 0.5);
    a.set_jrd(Task::OD, i);
    anns.push_back(a);
  }
  const auto st = dataset_stats(anns);
  const auto& od = st.tasks.at(Task::OD);
  EXPECT_EQ(od.count, 20u);
  EXPECT_DOUBLE_EQ(*od.mean, 9.5);
  EXPECT_EQ(od.histogram[0], 1u);
  for (int b = 0; b < 10; ++b) {
    EXPECT_EQ(od.decile_counts[b], 2u);
    EXPECT_DOUBLE_EQ(*od.size_deciles[b], 2 * b + 0.5);
  }
  EXPECT_DOUBLE_EQ(*od.location_grid[3], 4.5);   // middle row, left column
  EXPECT_DOUBLE_EQ(*od.location_grid[5], 14.5);  // middle row, right column
  EXPECT_FALSE(od.location_grid[0]);
  EXPECT_EQ(st.tasks.at(Task::IS).count, 0u);
  EXPECT_FALSE(st.tasks.at(Task::IS).mean);
}

TEST(AnnotationJson, RoundTrip) {
  JrdAnnotation a;
  a.image_id = "im";
  a.object_id = 3;
  a.box = BoundingBox(1.5, 2, 3, 4);
  a.attrs = AttributeTriplet(0.25, 0.1, 0.9);
  a.set_jrd(Task::IS, 12);
  const auto text = annotations_to_json({a}, 0.75, 3);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(annotation_from_json(j["annotations"][0]), a);
}
