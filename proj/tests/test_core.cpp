#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "mtjrd/core.hpp"
#include "mtjrd/image_io.hpp"

using namespace mtjrd;

TEST(ImagePlane, RejectsTinyAndBadChannels) {
  EXPECT_THROW(ImagePlane(7, 8, 3), InvalidArgument);
  EXPECT_THROW(ImagePlane(8, 7, 1), InvalidArgument);
  EXPECT_THROW(ImagePlane(8, 8, 2), InvalidArgument);
  EXPECT_THROW(ImagePlane(8, 8, 1, std::vector<std::uint8_t>(10)), InvalidArgument);
  ImagePlane p(8, 9, 3);
  p.at(7, 8, 2) = 5;
  EXPECT_EQ(p.samples().back(), 5);
}

TEST(BoundingBox, Validation) {
  EXPECT_THROW(BoundingBox(0, 0, 0, 1), InvalidArgument);
  EXPECT_THROW(BoundingBox(0, 0, 1, -1), InvalidArgument);
  BoundingBox b(2, 3, 4, 5);
  EXPECT_DOUBLE_EQ(b.area(), 20);
  EXPECT_TRUE(b.within(6, 8));
  EXPECT_FALSE(b.within(5, 8));
}

TEST(Mask, BoundsAndCount) {
  Mask m(10, 10);
  EXPECT_FALSE(m.bounds());
  m.set(2, 3, true);
  m.set(5, 7, true);
  EXPECT_EQ(m.count(), 2u);
  EXPECT_EQ(*m.bounds(), BoundingBox(2, 3, 4, 5));
}

TEST(KeypointSet, Validation) {
  EXPECT_THROW(KeypointSet(std::vector<Keypoint>(16), 1.0), InvalidArgument);
  EXPECT_THROW(KeypointSet(std::vector<Keypoint>(17), 0.0), InvalidArgument);
  std::vector<Keypoint> pts(17);
  pts[0].visibility = 3;
  EXPECT_THROW(KeypointSet(pts, 1.0), InvalidArgument);
  EXPECT_FALSE(KeypointSet(std::vector<Keypoint>(17), 1.0).bounds());
}

TEST(TaskResponse, OutputMustMatchTask) {
  EXPECT_THROW(TaskResponse(Task::IS, 1, 0.9, BoundingBox(0, 0, 1, 1)), InvalidArgument);
  EXPECT_THROW(TaskResponse(Task::OD, 1, 1.5, BoundingBox(0, 0, 1, 1)), InvalidArgument);
  TaskResponse r(Task::OD, 1, 0.9, BoundingBox(1, 2, 3, 4));
  EXPECT_EQ(*r.box(), BoundingBox(1, 2, 3, 4));
  EXPECT_EQ(task_of(r.output()), Task::OD);
}

TEST(Tasks, ParseAndName) {
  for (Task t : kAllTasks) EXPECT_EQ(parse_task(task_name(t)), t);
  EXPECT_THROW(parse_task("seg"), InvalidArgument);
}

TEST(AttributeTriplet, RescalesTo224Frame) {
  // full image box: s = 1, centered
  auto a = attribute_triplet(BoundingBox(0, 0, 640, 480), 640, 480);
  EXPECT_DOUBLE_EQ(a.s, 1.0);
  EXPECT_DOUBLE_EQ(a.x0, 0.5);
  EXPECT_DOUBLE_EQ(a.y0, 0.5);
  // quarter-width, half-height box at the left edge
  a = attribute_triplet(BoundingBox(0, 120, 160, 240), 640, 480);
  EXPECT_NEAR(a.s, 0.125, 1e-15);
  EXPECT_NEAR(a.x0, 0.125, 1e-15);
  EXPECT_NEAR(a.y0, 0.5, 1e-15);
  EXPECT_THROW(attribute_triplet(BoundingBox(600, 0, 100, 10), 640, 480), InvalidArgument);
  EXPECT_THROW(AttributeTriplet(1.5, 0.5, 0.5), InvalidArgument);
}

TEST(JrdAnnotation, RangeChecked) {
  JrdAnnotation a;
  EXPECT_THROW(a.set_jrd(Task::OD, 64), InvalidArgument);
  EXPECT_THROW(a.set_jrd(Task::OD, -1), InvalidArgument);
  a.set_jrd(Task::KPD, 0);
  EXPECT_EQ(a.jrd_for(Task::KPD), 0);
  EXPECT_FALSE(a.jrd_for(Task::OD));
}

TEST(Rle, RunsRoundTrip) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Mask m(13, 9);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 13; ++x) m.set(x, y, rng() % 3 == 0);
    const auto runs = io::mask_to_runs(m);
    EXPECT_EQ(io::runs_to_mask(runs, 13, 9), m);
    EXPECT_EQ(io::coco_string_to_runs(io::runs_to_coco_string(runs)), runs);
  }
}

TEST(Rle, ColumnMajorStartsWithZeros) {
  Mask m(3, 2);
  m.set(0, 0, true);  // first pixel set: leading zero-length run
  const auto runs = io::mask_to_runs(m);
  ASSERT_GE(runs.size(), 2u);
  EXPECT_EQ(runs[0], 0u);
  EXPECT_EQ(runs[1], 1u);
  m = Mask(3, 2);
  m.set(1, 0, true);  // column-major index 2
  EXPECT_EQ(io::mask_to_runs(m), (std::vector<std::uint32_t>{2, 1, 3}));
}

TEST(Rle, MatchesCocoReferenceStrings) {
  // strings produced by pycocotools.mask.encode for the same run sequences
  EXPECT_EQ(io::runs_to_coco_string({3, 5, 10, 2, 100}), "35:Mj2");
  EXPECT_EQ(io::runs_to_coco_string({0, 64, 1000, 7}), "0P2Xo0WN");
  EXPECT_EQ(io::coco_string_to_runs("0P2Xo0WN"), (std::vector<std::uint32_t>{0, 64, 1000, 7}));
}

TEST(ImageIo, PnmAndPngRoundTrip) {
  ImagePlane img(17, 11, 3);
  for (std::size_t i = 0; i < img.samples().size(); ++i) img.samples()[i] = static_cast<std::uint8_t>(i * 7);
  const auto dir = std::filesystem::temp_directory_path() / "mtjrd_core_io";
  std::filesystem::create_directories(dir);
  io::write_image(dir / "a.ppm", img);
  io::write_image(dir / "a.png", img);
  EXPECT_EQ(io::read_image(dir / "a.ppm"), img);
  EXPECT_EQ(io::read_image(dir / "a.png"), img);
  ImagePlane gray(9, 8, 1);
  gray.at(3, 4) = 200;
  io::write_image(dir / "g.pgm", gray);
  io::write_image(dir / "g.png", gray);
  EXPECT_EQ(io::read_image(dir / "g.pgm"), gray);
  EXPECT_EQ(io::read_image(dir / "g.png"), gray);
  EXPECT_THROW(io::read_image(dir / "missing.png"), IoError);
  io::write_text(dir / "bad.png", "not an image");
  EXPECT_THROW(io::read_image(dir / "bad.png"), ParseError);
}

TEST(ImageIo, MaskPngRoundTrip) {
  Mask m(12, 10);
  m.set(4, 5, true);
  m.set(11, 9, true);
  const auto p = std::filesystem::temp_directory_path() / "mtjrd_core_mask.png";
  io::write_mask_png(p, m);
  EXPECT_EQ(io::read_mask_png(p), m);
}
