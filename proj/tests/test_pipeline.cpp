#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtjrd/hash.hpp"
#include "mtjrd/pipeline.hpp"
#include "mtjrd/predictor.hpp"
#include "support.hpp"

using namespace mtjrd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

fs::path work_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / "mtjrd_pipeline_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Run cli(const std::string& args) {
  const auto out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = "cd '" + work_dir().string() + "' && '" + std::string(MTJRD_CLI) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string fixtures() { return test_support::data_path("../fixtures"); }

}  // namespace

TEST(Cli, AnnotateReproducesGoldenFile) {
  const auto r = cli("annotate --responses " + fixtures() + "/responses -o ann.json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(work_dir() / "ann.json"), slurp(fixtures() + "/golden_annotations.json"));
  const auto m = nlohmann::json::parse(slurp(work_dir() / "ann.json.manifest.json"));
  EXPECT_EQ(m["command"], "annotate");
  EXPECT_EQ(m["outputs"][0]["sha256"], sha256_file(work_dir() / "ann.json"));
  EXPECT_FALSE(m["config"].contains("threads"));
}

TEST(Cli, ManifestsAreDeterministic) {
  ASSERT_EQ(cli("annotate --responses " + fixtures() + "/responses -o a1.json --threads 1").code, 0);
  ASSERT_EQ(cli("annotate --responses " + fixtures() + "/responses -o a1.json --threads 3").code, 0);
  const auto first = slurp(work_dir() / "a1.json.manifest.json");
  ASSERT_EQ(cli("annotate --responses " + fixtures() + "/responses -o a1.json").code, 0);
  EXPECT_EQ(slurp(work_dir() / "a1.json.manifest.json"), first);
}

TEST(Cli, BdMetricOfIdenticalCurvesPrintsZero) {
  io::write_text(work_dir() / "c.csv", "bpp,accuracy\n0.1,0.3\n0.2,0.45\n0.4,0.55\n0.8,0.6\n");
  io::write_text(work_dir() / "d.csv", "bpp,accuracy\n0.1,0.32\n0.2,0.47\n0.4,0.57\n0.8,0.62\n");
  auto r = cli("bd-metric c.csv c.csv");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "0.00\n");
  r = cli("bd-metric c.csv d.csv");
  EXPECT_EQ(r.out, "2.00\n");
  r = cli("report c.csv d.csv -o plot.svg");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(work_dir() / "plot.svg"));
}

TEST(Cli, TrainWithZeroEpochsWritesSeededInit) {
  const auto r = cli("train --toy 4 --epochs 0 --seed 7 -o init.bin");
  ASSERT_EQ(r.code, 0) << r.err;
  predictor::ModelConfig cfg;
  cfg.seed = 7;
  EXPECT_TRUE(predictor::load_checkpoint<float>(work_dir() / "init.bin") == predictor::Model<float>(cfg));
}

TEST(Cli, EncodeDecodeRoundTrip) {
  const auto img = test_support::data_path("corpus/coffee.ppm");
  auto r = cli("encode --image " + img + " --qf 20 --region 16,16,40,40:90 -o c.jpg");
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("decode --input c.jpg -o c.png");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rec = io::read_image(work_dir() / "c.png");
  const auto stream = codec::Bitstream{io::read_file(work_dir() / "c.jpg")};
  EXPECT_EQ(rec, codec::decode(stream));
  EXPECT_EQ(codec::read_qfmap(stream)->at(1, 1), 90);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("annotate --no-such-flag").code, 2);
  auto r = cli("annotate --responses " + fixtures() + "/responses --threshold 1.5 -o x.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("threshold"), std::string::npos);
  r = cli("annotate --responses /no/such/dir -o x.json");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("responses"), std::string::npos);
  r = cli("bd-metric missing.csv missing.csv");
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, PrintConfigPrecedence) {
  io::write_text(work_dir() / "cfg.json", R"({"threshold": 0.8, "window": 4})");
  auto r = cli("annotate --config cfg.json --print-config");
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["threshold"].get<double>(), 0.8);
  EXPECT_EQ(j["window"], 4);
  r = cli("annotate --config cfg.json --threshold 0.7 --print-config");
  j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["threshold"].get<double>(), 0.7);
  EXPECT_EQ(j["window"], 4);
  r = cli("annotate --print-config");
  j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["threshold"].get<double>(), 0.75);
  EXPECT_EQ(j["window"], 3);
}

TEST(PipelineConfig, MergeRejectsUnknownKeysAndValidates) {
  pipeline::PipelineConfig c;
  EXPECT_THROW(pipeline::merge_json(c, nlohmann::json{{"thresold", 0.5}}), pipeline::ValidationError);
  pipeline::merge_json(c, nlohmann::json{{"window", 5}});
  EXPECT_EQ(c.window, 5);
  c.window = 0;
  try {
    pipeline::validate(c);
    FAIL();
  } catch (const pipeline::ValidationError& e) {
    EXPECT_EQ(e.field(), "window");
  }
}

TEST(PipelineConfig, ImagePathResolvesExtensions) {
  const auto p = pipeline::image_path(fixtures() + "/images", "img_a");
  EXPECT_EQ(p.extension(), ".ppm");
  EXPECT_THROW(pipeline::image_path(fixtures() + "/images", "nope"), IoError);
}
