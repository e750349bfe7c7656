#ifndef MTJRD_CORE_HPP
#define MTJRD_CORE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace mtjrd {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Raised when no keypoint of the reference is labeled, so OKS is undefined.
class UndefinedSimilarity : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

enum class Task : int { OD = 0, IS = 1, KPD = 2 };

inline constexpr std::array<Task, 3> kAllTasks = {Task::OD, Task::IS, Task::KPD};
inline constexpr int kNumTasks = 3;
inline constexpr int kNumLevels = 64;  // distortion levels q = 0..63
inline constexpr int kMaxJrd = kNumLevels - 1;

inline std::string_view task_name(Task t) {
  switch (t) {
    case Task::OD: return "od";
    case Task::IS: return "is";
    case Task::KPD: return "kpd";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "od" || s == "OD") return Task::OD;
  if (s == "is" || s == "IS") return Task::IS;
  if (s == "kpd" || s == "KPD") return Task::KPD;
  throw InvalidArgument("unknown task '" + std::string(s) + "' (expected od|is|kpd)");
}

inline int task_index(Task t) { return static_cast<int>(t); }

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// 8-bit image, row-major, channel-interleaved.
class ImagePlane {
 public:
  ImagePlane() = default;
  ImagePlane(int width, int height, int channels)
      : ImagePlane(width, height, channels,
                   std::vector<std::uint8_t>(checked_size(width, height, channels), 0)) {}
  ImagePlane(int width, int height, int channels, std::vector<std::uint8_t> samples)
      : width_(width), height_(height), channels_(channels), samples_(std::move(samples)) {
    if (samples_.size() != checked_size(width, height, channels))
      throw InvalidArgument("ImagePlane: sample count does not match width*height*channels");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return samples_.empty(); }

  const std::vector<std::uint8_t>& samples() const noexcept { return samples_; }
  std::vector<std::uint8_t>& samples() noexcept { return samples_; }

  std::uint8_t at(int x, int y, int c = 0) const {
    return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return samples_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  bool same_shape(const ImagePlane& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;

 private:
  static std::size_t checked_size(int w, int h, int c) {
    if (w < 8 || h < 8) throw InvalidArgument("ImagePlane: width and height must be >= 8");
    if (c != 1 && c != 3) throw InvalidArgument("ImagePlane: channels must be 1 or 3");
    return static_cast<std::size_t>(w) * h * c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> samples_;
};

// ---------------------------------------------------------------------------
// Task outputs
// ---------------------------------------------------------------------------

struct BoundingBox {
  double x = 0, y = 0, w = 1, h = 1;

  BoundingBox() = default;
  BoundingBox(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    if (!(w > 0) || !(h > 0)) throw InvalidArgument("BoundingBox: w and h must be > 0");
  }

  double area() const noexcept { return w * h; }
  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }

  bool within(int image_w, int image_h) const noexcept {
    return x >= 0 && y >= 0 && right() <= image_w && bottom() <= image_h;
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Binary mask, one bit per pixel, row-major.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height) : width_(width), height_(height), bits_(checked(width, height), 0) {}
  Mask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    if (bits_.size() != checked(width, height))
      throw InvalidArgument("Mask: bit count does not match width*height");
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  /// Tight bounding box of set pixels; nullopt when empty.
  std::optional<BoundingBox> bounds() const {
    int x0 = width_, y0 = height_, x1 = -1, y1 = -1;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (at(x, y)) {
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    if (x1 < 0) return std::nullopt;
    return BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  static std::size_t checked(int w, int h) {
    if (w <= 0 || h <= 0) throw InvalidArgument("Mask: dimensions must be positive");
    return static_cast<std::size_t>(w) * h;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Keypoint {
  double x = 0, y = 0;
  int visibility = 0;  // 0 unlabeled, 1 labeled-invisible, 2 labeled-visible
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

inline constexpr int kNumKeypoints = 17;

/// COCO person skeleton: 17 keypoints plus the object area used as s^2 in OKS.
class KeypointSet {
 public:
  KeypointSet() = default;
  KeypointSet(std::vector<Keypoint> points, double area) : points_(std::move(points)), area_(area) {
    if (points_.size() != kNumKeypoints)
      throw InvalidArgument("KeypointSet: expected 17 keypoints, got " +
                            std::to_string(points_.size()));
    if (!(area_ > 0)) throw InvalidArgument("KeypointSet: area must be > 0");
    for (const auto& p : points_)
      if (p.visibility < 0 || p.visibility > 2)
        throw InvalidArgument("KeypointSet: visibility must be 0, 1 or 2");
  }

  const std::vector<Keypoint>& points() const noexcept { return points_; }
  double area() const noexcept { return area_; }

  /// Extent of labeled keypoints; nullopt when none are labeled.
  std::optional<BoundingBox> bounds() const {
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    bool any = false;
    for (const auto& p : points_) {
      if (p.visibility == 0) continue;
      any = true;
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    if (!any) return std::nullopt;
    return BoundingBox(x0, y0, std::max(1.0, x1 - x0), std::max(1.0, y1 - y0));
  }

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;

 private:
  std::vector<Keypoint> points_;
  double area_ = 1;
};

using TaskOutput = std::variant<BoundingBox, Mask, KeypointSet>;

inline Task task_of(const TaskOutput& o) { return static_cast<Task>(o.index()); }

/// One detector result for one object.
class TaskResponse {
 public:
  TaskResponse(Task task, int class_id, double confidence, TaskOutput output,
               std::optional<BoundingBox> box = std::nullopt)
      : task_(task), class_id_(class_id), confidence_(confidence), output_(std::move(output)),
        box_(box) {
    if (task_of(output_) != task_)
      throw InvalidArgument("TaskResponse: output kind does not match task " +
                            std::string(task_name(task_)));
    if (!(confidence_ >= 0.0 && confidence_ <= 1.0))
      throw InvalidArgument("TaskResponse: confidence must lie in [0,1]");
  }

  Task task() const noexcept { return task_; }
  int class_id() const noexcept { return class_id_; }
  double confidence() const noexcept { return confidence_; }
  const TaskOutput& output() const noexcept { return output_; }

  /// Object box: explicit when supplied, otherwise derived from the output.
  std::optional<BoundingBox> box() const {
    if (box_) return box_;
    switch (task_) {
      case Task::OD: return std::get<BoundingBox>(output_);
      case Task::IS: return std::get<Mask>(output_).bounds();
      case Task::KPD: return std::get<KeypointSet>(output_).bounds();
    }
    return std::nullopt;
  }

 private:
  Task task_;
  int class_id_;
  double confidence_;
  TaskOutput output_;
  std::optional<BoundingBox> box_;
};

// ---------------------------------------------------------------------------
// Attributes and annotations
// ---------------------------------------------------------------------------

inline constexpr double kModelFrame = 224.0;

/// Object size and center in the 224x224 model frame; x0, y0 normalized to [0,1].
struct AttributeTriplet {
  double s = 1, x0 = 0.5, y0 = 0.5;

  AttributeTriplet() = default;
  AttributeTriplet(double s_, double x0_, double y0_) : s(s_), x0(x0_), y0(y0_) {
    if (!(s > 0 && s <= 1)) throw InvalidArgument("AttributeTriplet: s must lie in (0,1]");
    if (!(x0 >= 0 && x0 <= 1 && y0 >= 0 && y0 <= 1))
      throw InvalidArgument("AttributeTriplet: x0, y0 must lie in [0,1]");
  }

  friend bool operator==(const AttributeTriplet&, const AttributeTriplet&) = default;
};

/// Box coordinates are rescaled (anisotropically) to 224x224 before normalizing.
inline AttributeTriplet attribute_triplet(const BoundingBox& box, double image_w, double image_h) {
  if (!(image_w > 0) || !(image_h > 0))
    throw InvalidArgument("attribute_triplet: image dimensions must be positive");
  if (!(box.w > 0) || !(box.h > 0)) throw InvalidArgument("attribute_triplet: degenerate box");
  if (!box.within(static_cast<int>(std::ceil(image_w)), static_cast<int>(std::ceil(image_h))))
    throw InvalidArgument("attribute_triplet: box lies outside the image");
  const double sx = kModelFrame / image_w;
  const double sy = kModelFrame / image_h;
  const double w = box.w * sx;
  const double h = box.h * sy;
  const double cx = (box.x + box.w / 2) * sx;
  const double cy = (box.y + box.h / 2) * sy;
  return {w * h / (kModelFrame * kModelFrame), cx / kModelFrame, cy / kModelFrame};
}

struct JrdAnnotation {
  std::string image_id;
  int object_id = 0;
  BoundingBox box;
  AttributeTriplet attrs;
  std::map<Task, int> jrd;  // absent when the object was never recognizable for that task

  std::optional<int> jrd_for(Task t) const {
    auto it = jrd.find(t);
    if (it == jrd.end()) return std::nullopt;
    return it->second;
  }

  void set_jrd(Task t, int value) {
    if (value < 0 || value > kMaxJrd)
      throw InvalidArgument("JrdAnnotation: jrd must lie in [0,63]");
    jrd[t] = value;
  }

  friend bool operator==(const JrdAnnotation&, const JrdAnnotation&) = default;
};

}  // namespace mtjrd

#endif  // MTJRD_CORE_HPP
