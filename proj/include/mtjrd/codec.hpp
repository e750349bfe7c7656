#ifndef MTJRD_CODEC_HPP
#define MTJRD_CODEC_HPP

// Baseline sequential JPEG (Huffman, 8-bit) with a per-macroblock quality map.
//
// Each 16x16 macroblock is quantized with the tables of its own quality
// factor, dequantized, then requantized onto the file-level tables (those of
// the highest quality in the map). The scan is therefore ordinary baseline
// JPEG; the map is carried in an APP10 "JRDQ" segment for inspection only and
// is never needed for reconstruction.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtjrd/core.hpp"

namespace mtjrd::codec {

inline constexpr int kMacroblock = 16;
inline constexpr int kMinQf = 1;
inline constexpr int kMaxQf = 100;

/// kZigzagToNatural[i] is the natural (row-major) index of zigzag position i.
inline constexpr std::array<std::uint8_t, 64> kZigzagToNatural = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// Annex K base tables, natural order.
inline constexpr std::array<std::uint16_t, 64> kBaseLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
inline constexpr std::array<std::uint16_t, 64> kBaseChroma = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

using Table64 = std::array<std::uint16_t, 64>;

/// Quantization tables in natural order.
struct QuantTables {
  Table64 luma{};
  Table64 chroma{};
  friend bool operator==(const QuantTables&, const QuantTables&) = default;
};

/// IJG quality scaling of the Annex K tables.
inline QuantTables qf_to_tables(int qf) {
  if (qf < kMinQf || qf > kMaxQf)
    throw InvalidArgument("qf_to_tables: quality factor must lie in [1,100], got " +
                          std::to_string(qf));
  const int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  QuantTables t;
  for (int i = 0; i < 64; ++i) {
    t.luma[i] = static_cast<std::uint16_t>(std::clamp((kBaseLuma[i] * scale + 50) / 100, 1, 255));
    t.chroma[i] =
        static_cast<std::uint16_t>(std::clamp((kBaseChroma[i] * scale + 50) / 100, 1, 255));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Quality map
// ---------------------------------------------------------------------------

inline int macroblocks_for(int pixels) { return (pixels + kMacroblock - 1) / kMacroblock; }

class QfMap {
 public:
  QfMap() = default;
  QfMap(int blocks_w, int blocks_h, std::vector<int> qf)
      : blocks_w_(blocks_w), blocks_h_(blocks_h), qf_(std::move(qf)) {
    if (blocks_w_ <= 0 || blocks_h_ <= 0) throw InvalidArgument("QfMap: empty grid");
    if (qf_.size() != static_cast<std::size_t>(blocks_w_) * blocks_h_)
      throw InvalidArgument("QfMap: value count does not match grid");
    for (int v : qf_)
      if (v < kMinQf || v > kMaxQf) throw InvalidArgument("QfMap: qf values must lie in [1,100]");
  }

  static QfMap uniform(int image_w, int image_h, int qf) {
    const int bw = macroblocks_for(image_w), bh = macroblocks_for(image_h);
    return QfMap(bw, bh, std::vector<int>(static_cast<std::size_t>(bw) * bh, qf));
  }

  int blocks_w() const noexcept { return blocks_w_; }
  int blocks_h() const noexcept { return blocks_h_; }
  const std::vector<int>& values() const noexcept { return qf_; }
  int at(int bx, int by) const { return qf_[static_cast<std::size_t>(by) * blocks_w_ + bx]; }
  int& at(int bx, int by) { return qf_[static_cast<std::size_t>(by) * blocks_w_ + bx]; }

  /// Quality of the tables written to the file.
  int file_qf() const { return *std::max_element(qf_.begin(), qf_.end()); }

  bool matches(int image_w, int image_h) const noexcept {
    return blocks_w_ == macroblocks_for(image_w) && blocks_h_ == macroblocks_for(image_h);
  }

  bool is_uniform() const {
    return std::all_of(qf_.begin(), qf_.end(), [&](int v) { return v == qf_.front(); });
  }

  friend bool operator==(const QfMap&, const QfMap&) = default;

 private:
  int blocks_w_ = 0;
  int blocks_h_ = 0;
  std::vector<int> qf_;
};

struct QfRegion {
  BoundingBox box;
  int qf = 0;
};

/// Blocks touched by any region take that region's qf (max on overlap); the rest background.
inline QfMap rasterize_qfmap(std::span<const QfRegion> regions, int background_qf, int image_w,
                             int image_h) {
  if (background_qf < kMinQf || background_qf > kMaxQf)
    throw InvalidArgument("rasterize_qfmap: background qf must lie in [1,100]");
  const int bw = macroblocks_for(image_w), bh = macroblocks_for(image_h);
  std::vector<int> qf(static_cast<std::size_t>(bw) * bh, background_qf);
  std::vector<int> fg(qf.size(), 0);
  for (const auto& r : regions) {
    if (r.qf < kMinQf || r.qf > kMaxQf)
      throw InvalidArgument("rasterize_qfmap: region qf must lie in [1,100]");
    const int bx0 = std::clamp(static_cast<int>(std::floor(r.box.x)) / kMacroblock, 0, bw - 1);
    const int by0 = std::clamp(static_cast<int>(std::floor(r.box.y)) / kMacroblock, 0, bh - 1);
    const int bx1 =
        std::clamp((static_cast<int>(std::ceil(r.box.right())) - 1) / kMacroblock, 0, bw - 1);
    const int by1 =
        std::clamp((static_cast<int>(std::ceil(r.box.bottom())) - 1) / kMacroblock, 0, bh - 1);
    for (int by = by0; by <= by1; ++by)
      for (int bx = bx0; bx <= bx1; ++bx) {
        auto& cell = fg[static_cast<std::size_t>(by) * bw + bx];
        cell = std::max(cell, r.qf);
      }
  }
  for (std::size_t i = 0; i < qf.size(); ++i)
    if (fg[i] > 0) qf[i] = fg[i];
  return QfMap(bw, bh, std::move(qf));
}

// ---------------------------------------------------------------------------
// Streams and coefficient images
// ---------------------------------------------------------------------------

struct Bitstream {
  std::vector<std::uint8_t> bytes;
  std::size_t size() const noexcept { return bytes.size(); }
  friend bool operator==(const Bitstream&, const Bitstream&) = default;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(std::size_t offset, const std::string& what)
      : std::runtime_error("decode error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct Component {
  int id = 1;
  int h = 1, v = 1;  // sampling factors
  int quant_table = 0;
  int dc_table = 0, ac_table = 0;
  int blocks_w = 0, blocks_h = 0;  // padded to whole MCUs
  std::vector<std::int16_t> coeffs;  // blocks_w*blocks_h blocks, 64 zigzag levels each

  std::int16_t* block(int bx, int by) {
    return coeffs.data() + (static_cast<std::size_t>(by) * blocks_w + bx) * 64;
  }
  const std::int16_t* block(int bx, int by) const {
    return coeffs.data() + (static_cast<std::size_t>(by) * blocks_w + bx) * 64;
  }
  friend bool operator==(const Component&, const Component&) = default;
};

/// Quantized DCT levels of a whole frame plus the tables needed to reconstruct it.
struct CoefficientImage {
  int width = 0, height = 0;
  std::array<Table64, 4> quant{};  // natural order, indexed by table id
  std::vector<Component> components;

  int hmax() const {
    int m = 1;
    for (const auto& c : components) m = std::max(m, c.h);
    return m;
  }
  int vmax() const {
    int m = 1;
    for (const auto& c : components) m = std::max(m, c.v);
    return m;
  }
  int mcus_x() const { return (width + 8 * hmax() - 1) / (8 * hmax()); }
  int mcus_y() const { return (height + 8 * vmax() - 1) / (8 * vmax()); }

  friend bool operator==(const CoefficientImage&, const CoefficientImage&) = default;
};

namespace detail {

struct HuffmanSpec {
  std::array<std::uint8_t, 16> counts;
  std::vector<std::uint8_t> values;
};

inline const HuffmanSpec& dc_luma_spec() {
  static const HuffmanSpec s{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
                             {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}
inline const HuffmanSpec& dc_chroma_spec() {
  static const HuffmanSpec s{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
                             {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  return s;
}
inline const HuffmanSpec& ac_luma_spec() {
  static const HuffmanSpec s{
      {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 125},
      {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
       0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52,
       0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25,
       0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
       0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64,
       0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83,
       0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
       0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
       0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3,
       0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8,
       0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA}};
  return s;
}
inline const HuffmanSpec& ac_chroma_spec() {
  static const HuffmanSpec s{
      {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 119},
      {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61,
       0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33,
       0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18,
       0x19, 0x1A, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
       0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63,
       0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A,
       0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97,
       0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
       0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA,
       0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7,
       0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA}};
  return s;
}

struct Code {
  std::uint16_t bits = 0;
  std::uint8_t length = 0;
};

/// Canonical code assignment (Annex C).
inline std::array<Code, 256> build_encoder_table(const HuffmanSpec& spec) {
  std::array<Code, 256> table{};
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < spec.counts[len - 1]; ++i) table[spec.values[k++]] = {code++, static_cast<std::uint8_t>(len)};
    code <<= 1;
  }
  return table;
}

struct DecoderTable {
  std::array<std::int32_t, 18> maxcode{};
  std::array<std::int32_t, 17> valptr{};
  std::array<std::int32_t, 17> mincode{};
  std::vector<std::uint8_t> values;
  bool defined = false;
};

inline DecoderTable build_decoder_table(const HuffmanSpec& spec) {
  DecoderTable t;
  t.values = spec.values;
  std::int32_t code = 0;
  std::int32_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    const int n = spec.counts[len - 1];
    if (n == 0) {
      t.maxcode[len] = -1;
    } else {
      t.valptr[len] = k;
      t.mincode[len] = code;
      code += n;
      k += n;
      t.maxcode[len] = code - 1;
    }
    code <<= 1;
  }
  t.maxcode[17] = 0x7fffffff;
  t.defined = true;
  return t;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int length) {
    for (int i = length - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++count_ == 8) emit();
    }
  }
  void put(const Code& c) { put(c.bits, c.length); }

  /// Pads the final byte with 1-bits.
  void flush() {
    while (count_ != 0) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | 1u);
      if (++count_ == 8) emit();
    }
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    count_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int count_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

  int bit() {
    if (count_ == 0) fill();
    --count_;
    return (acc_ >> count_) & 1;
  }

  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }

  std::size_t position() const noexcept { return pos_; }

  /// Skips to the byte boundary after the entropy-coded segment.
  void align() { count_ = 0; }

 private:
  void fill() {
    if (pos_ >= data_.size()) throw DecodeError(pos_, "unexpected end of entropy-coded data");
    const std::uint8_t b = data_[pos_];
    if (b == 0xFF) {
      if (pos_ + 1 >= data_.size()) throw DecodeError(pos_, "truncated stuffed byte");
      if (data_[pos_ + 1] != 0x00) throw DecodeError(pos_, "marker inside entropy-coded data");
      pos_ += 2;
    } else {
      pos_ += 1;
    }
    acc_ = b;
    count_ = 8;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
  std::uint8_t acc_ = 0;
  int count_ = 0;
};

inline int decode_symbol(BitReader& br, const DecoderTable& t) {
  std::int32_t code = br.bit();
  int len = 1;
  while (len <= 16 && code > t.maxcode[len]) {
    code = (code << 1) | br.bit();
    ++len;
  }
  if (len > 16) throw DecodeError(br.position(), "invalid Huffman code");
  const std::int32_t idx = t.valptr[len] + code - t.mincode[len];
  if (idx < 0 || idx >= static_cast<std::int32_t>(t.values.size()))
    throw DecodeError(br.position(), "Huffman code out of table range");
  return t.values[static_cast<std::size_t>(idx)];
}

inline int magnitude_category(int v) {
  int a = v < 0 ? -v : v;
  int n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

inline int extend(int bits, int size) {
  return bits < (1 << (size - 1)) ? bits - (1 << size) + 1 : bits;
}

/// Orthonormal 8-point DCT-II basis: kBasis[u][x].
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    const double pi = std::acos(-1.0);
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        b[u][x] = (u == 0 ? std::sqrt(0.125) : 0.5) * std::cos((2 * x + 1) * u * pi / 16.0);
    return b;
  }();
  return basis;
}

inline void fdct(const double* in, double* out) {
  const auto& c = dct_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0;
      for (int x = 0; x < 8; ++x) s += c[u][x] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int y = 0; y < 8; ++y) s += c[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
}

inline void idct(const double* in, double* out) {
  const auto& c = dct_basis();
  double tmp[64];
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int u = 0; u < 8; ++u) s += c[u][x] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y) {
      double s = 0;
      for (int v = 0; v < 8; ++v) s += c[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
}

inline std::uint8_t clamp_sample(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

class TableCache {
 public:
  const QuantTables& get(int qf) {
    auto& slot = cache_[static_cast<std::size_t>(qf)];
    if (!slot) slot = qf_to_tables(qf);
    return *slot;
  }

 private:
  std::array<std::optional<QuantTables>, kMaxQf + 1> cache_{};
};

/// Quantize with the block's tables, then express the levels on the file tables.
inline void quantize_block(const double* samples, const Table64& block_q, const Table64& file_q,
                           std::int16_t* zigzag_out) {
  double coef[64];
  fdct(samples, coef);
  for (int i = 0; i < 64; ++i) {
    const int n = kZigzagToNatural[i];
    long level = std::lround(coef[n] / block_q[n]);
    if (block_q[n] != file_q[n])
      level = std::lround(static_cast<double>(level) * block_q[n] / file_q[n]);
    const long limit = i == 0 ? 2047 : 1023;
    zigzag_out[i] = static_cast<std::int16_t>(std::clamp(level, -limit, limit));
  }
}

inline void put_u16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

inline void put_marker(std::vector<std::uint8_t>& out, std::uint8_t m) {
  out.push_back(0xFF);
  out.push_back(m);
}

inline constexpr std::uint8_t kQfMapMarker = 0xEA;  // APP10
inline constexpr char kQfMapTag[5] = {'J', 'R', 'D', 'Q', '\0'};
inline constexpr std::uint8_t kQfMapVersion = 1;
inline constexpr std::size_t kQfMapChunk = 65000;

inline void write_qfmap_segments(std::vector<std::uint8_t>& out, const QfMap& map) {
  const auto& vals = map.values();
  for (std::size_t start = 0; start < vals.size(); start += kQfMapChunk) {
    const std::size_t n = std::min(kQfMapChunk, vals.size() - start);
    put_marker(out, kQfMapMarker);
    put_u16(out, static_cast<int>(2 + 5 + 1 + 2 + 2 + 4 + 2 + n));
    out.insert(out.end(), kQfMapTag, kQfMapTag + 5);
    out.push_back(kQfMapVersion);
    put_u16(out, map.blocks_w());
    put_u16(out, map.blocks_h());
    put_u16(out, static_cast<int>(start >> 16));
    put_u16(out, static_cast<int>(start & 0xFFFF));
    put_u16(out, static_cast<int>(n));
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(vals[start + i]));
  }
}

inline void encode_block(BitWriter& bw, const std::int16_t* zz, int& pred,
                         const std::array<Code, 256>& dc, const std::array<Code, 256>& ac) {
  const int diff = zz[0] - pred;
  pred = zz[0];
  const int dcat = magnitude_category(diff);
  bw.put(dc[static_cast<std::size_t>(dcat)]);
  if (dcat) bw.put(static_cast<std::uint32_t>(diff < 0 ? diff - 1 : diff) & ((1u << dcat) - 1), dcat);
  int last = 0;
  for (int i = 63; i > 0; --i)
    if (zz[i] != 0) {
      last = i;
      break;
    }
  int run = 0;
  for (int i = 1; i <= last; ++i) {
    if (zz[i] == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bw.put(ac[0xF0]);
      run -= 16;
    }
    const int cat = magnitude_category(zz[i]);
    bw.put(ac[static_cast<std::size_t>((run << 4) | cat)]);
    bw.put(static_cast<std::uint32_t>(zz[i] < 0 ? zz[i] - 1 : zz[i]) & ((1u << cat) - 1), cat);
    run = 0;
  }
  if (last < 63) bw.put(ac[0x00]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward pipeline
// ---------------------------------------------------------------------------

/// Colour conversion, subsampling, DCT and map-driven quantization.
inline CoefficientImage quantize(const ImagePlane& image, const QfMap& map) {
  if (!map.matches(image.width(), image.height()))
    throw InvalidArgument("encode: quality map grid does not match the image (expected " +
                          std::to_string(macroblocks_for(image.width())) + "x" +
                          std::to_string(macroblocks_for(image.height())) + " macroblocks)");
  detail::TableCache tables;
  const int file_qf = map.file_qf();
  const QuantTables& file_tables = tables.get(file_qf);

  CoefficientImage ci;
  ci.width = image.width();
  ci.height = image.height();
  ci.quant[0] = file_tables.luma;
  ci.quant[1] = file_tables.chroma;

  const bool color = image.channels() == 3;
  const int w = image.width(), h = image.height();
  const int pw = color ? macroblocks_for(w) * kMacroblock : (w + 7) / 8 * 8;
  const int ph = color ? macroblocks_for(h) * kMacroblock : (h + 7) / 8 * 8;

  // Planes, edge-replicated to the padded size and level-shifted.
  std::vector<std::vector<double>> planes(color ? 3 : 1,
                                          std::vector<double>(static_cast<std::size_t>(pw) * ph));
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      const int sx = std::min(x, w - 1), sy = std::min(y, h - 1);
      const std::size_t i = static_cast<std::size_t>(y) * pw + x;
      if (color) {
        const double r = image.at(sx, sy, 0), g = image.at(sx, sy, 1), b = image.at(sx, sy, 2);
        planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        planes[1][i] = -0.168735892 * r - 0.331264108 * g + 0.5 * b;
        planes[2][i] = 0.5 * r - 0.418687589 * g - 0.081312411 * b;
      } else {
        planes[0][i] = image.at(sx, sy, 0) - 128.0;
      }
    }

  auto qf_for_pixel = [&](int px, int py) {
    return map.at(std::min(px / kMacroblock, map.blocks_w() - 1),
                  std::min(py / kMacroblock, map.blocks_h() - 1));
  };

  if (!color) {
    Component y;
    y.id = 1;
    y.blocks_w = pw / 8;
    y.blocks_h = ph / 8;
    y.coeffs.assign(static_cast<std::size_t>(y.blocks_w) * y.blocks_h * 64, 0);
    double buf[64];
    for (int by = 0; by < y.blocks_h; ++by)
      for (int bx = 0; bx < y.blocks_w; ++bx) {
        for (int j = 0; j < 8; ++j)
          for (int i = 0; i < 8; ++i)
            buf[j * 8 + i] = planes[0][static_cast<std::size_t>(by * 8 + j) * pw + bx * 8 + i];
        detail::quantize_block(buf, tables.get(qf_for_pixel(bx * 8, by * 8)).luma,
                               file_tables.luma, y.block(bx, by));
      }
    ci.components.push_back(std::move(y));
    return ci;
  }

  // 4:2:0 chroma by 2x2 averaging (local to each macroblock).
  const int cw = pw / 2, ch = ph / 2;
  std::vector<std::vector<double>> chroma(2, std::vector<double>(static_cast<std::size_t>(cw) * ch));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        const auto& p = planes[1 + c];
        const std::size_t i0 = static_cast<std::size_t>(2 * y) * pw + 2 * x;
        chroma[c][static_cast<std::size_t>(y) * cw + x] =
            0.25 * (p[i0] + p[i0 + 1] + p[i0 + pw] + p[i0 + pw + 1]);
      }

  Component yc;
  yc.id = 1;
  yc.h = yc.v = 2;
  yc.blocks_w = pw / 8;
  yc.blocks_h = ph / 8;
  yc.coeffs.assign(static_cast<std::size_t>(yc.blocks_w) * yc.blocks_h * 64, 0);
  std::array<Component, 2> cc;
  for (int c = 0; c < 2; ++c) {
    cc[c].id = 2 + c;
    cc[c].quant_table = 1;
    cc[c].dc_table = cc[c].ac_table = 1;
    cc[c].blocks_w = cw / 8;
    cc[c].blocks_h = ch / 8;
    cc[c].coeffs.assign(static_cast<std::size_t>(cc[c].blocks_w) * cc[c].blocks_h * 64, 0);
  }

  double buf[64];
  for (int by = 0; by < yc.blocks_h; ++by)
    for (int bx = 0; bx < yc.blocks_w; ++bx) {
      for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 8; ++i)
          buf[j * 8 + i] = planes[0][static_cast<std::size_t>(by * 8 + j) * pw + bx * 8 + i];
      detail::quantize_block(buf, tables.get(qf_for_pixel(bx * 8, by * 8)).luma, file_tables.luma,
                             yc.block(bx, by));
    }
  for (int c = 0; c < 2; ++c)
    for (int by = 0; by < cc[c].blocks_h; ++by)
      for (int bx = 0; bx < cc[c].blocks_w; ++bx) {
        for (int j = 0; j < 8; ++j)
          for (int i = 0; i < 8; ++i)
            buf[j * 8 + i] = chroma[c][static_cast<std::size_t>(by * 8 + j) * cw + bx * 8 + i];
        detail::quantize_block(buf, tables.get(map.at(bx, by)).chroma, file_tables.chroma,
                               cc[c].block(bx, by));
      }
  ci.components.push_back(std::move(yc));
  ci.components.push_back(std::move(cc[0]));
  ci.components.push_back(std::move(cc[1]));
  return ci;
}

/// Serializes a coefficient image as baseline JPEG; the map segment is optional.
inline Bitstream write_jpeg(const CoefficientImage& ci, const QfMap* map = nullptr) {
  using namespace detail;
  std::vector<std::uint8_t> out;
  out.reserve(1024);
  put_marker(out, 0xD8);

  // APP0 JFIF 1.01, no thumbnail.
  put_marker(out, 0xE0);
  put_u16(out, 16);
  for (char c : {'J', 'F', 'I', 'F', '\0'}) out.push_back(static_cast<std::uint8_t>(c));
  out.insert(out.end(), {1, 1, 0, 0, 1, 0, 1, 0, 0});

  if (map) write_qfmap_segments(out, *map);

  const bool color = ci.components.size() == 3;
  const int ntables = color ? 2 : 1;
  put_marker(out, 0xDB);
  put_u16(out, 2 + ntables * 65);
  for (int t = 0; t < ntables; ++t) {
    out.push_back(static_cast<std::uint8_t>(t));
    for (int i = 0; i < 64; ++i) out.push_back(static_cast<std::uint8_t>(ci.quant[t][kZigzagToNatural[i]]));
  }

  put_marker(out, 0xC0);
  put_u16(out, 8 + 3 * static_cast<int>(ci.components.size()));
  out.push_back(8);
  put_u16(out, ci.height);
  put_u16(out, ci.width);
  out.push_back(static_cast<std::uint8_t>(ci.components.size()));
  for (const auto& c : ci.components) {
    out.push_back(static_cast<std::uint8_t>(c.id));
    out.push_back(static_cast<std::uint8_t>((c.h << 4) | c.v));
    out.push_back(static_cast<std::uint8_t>(c.quant_table));
  }

  const HuffmanSpec* specs[2][2] = {{&dc_luma_spec(), &ac_luma_spec()},
                                    {&dc_chroma_spec(), &ac_chroma_spec()}};
  put_marker(out, 0xC4);
  int dht_len = 2;
  for (int t = 0; t < ntables; ++t)
    for (int k = 0; k < 2; ++k) dht_len += 17 + static_cast<int>(specs[t][k]->values.size());
  put_u16(out, dht_len);
  for (int t = 0; t < ntables; ++t)
    for (int k = 0; k < 2; ++k) {
      out.push_back(static_cast<std::uint8_t>((k << 4) | t));
      out.insert(out.end(), specs[t][k]->counts.begin(), specs[t][k]->counts.end());
      out.insert(out.end(), specs[t][k]->values.begin(), specs[t][k]->values.end());
    }

  put_marker(out, 0xDA);
  put_u16(out, 6 + 2 * static_cast<int>(ci.components.size()));
  out.push_back(static_cast<std::uint8_t>(ci.components.size()));
  for (const auto& c : ci.components) {
    out.push_back(static_cast<std::uint8_t>(c.id));
    out.push_back(static_cast<std::uint8_t>((c.dc_table << 4) | c.ac_table));
  }
  out.insert(out.end(), {0, 63, 0});

  std::array<std::array<Code, 256>, 2> dc_codes = {build_encoder_table(dc_luma_spec()),
                                                   build_encoder_table(dc_chroma_spec())};
  std::array<std::array<Code, 256>, 2> ac_codes = {build_encoder_table(ac_luma_spec()),
                                                   build_encoder_table(ac_chroma_spec())};
  BitWriter bw(out);
  std::vector<int> pred(ci.components.size(), 0);
  if (ci.components.size() == 1) {
    const auto& c = ci.components[0];
    const int nbx = (ci.width + 7) / 8, nby = (ci.height + 7) / 8;
    for (int by = 0; by < nby; ++by)
      for (int bx = 0; bx < nbx; ++bx)
        encode_block(bw, c.block(bx, by), pred[0], dc_codes[c.dc_table], ac_codes[c.ac_table]);
  } else {
    for (int my = 0; my < ci.mcus_y(); ++my)
      for (int mx = 0; mx < ci.mcus_x(); ++mx)
        for (std::size_t k = 0; k < ci.components.size(); ++k) {
          const auto& c = ci.components[k];
          for (int v = 0; v < c.v; ++v)
            for (int hh = 0; hh < c.h; ++hh)
              encode_block(bw, c.block(mx * c.h + hh, my * c.v + v), pred[k],
                           dc_codes[c.dc_table], ac_codes[c.ac_table]);
        }
  }
  bw.flush();
  put_marker(out, 0xD9);
  return Bitstream{std::move(out)};
}

inline Bitstream encode(const ImagePlane& image, const QfMap& map) {
  return write_jpeg(quantize(image, map), &map);
}

inline Bitstream encode_uniform(const ImagePlane& image, int qf) {
  return encode(image, QfMap::uniform(image.width(), image.height(), qf));
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

struct ParsedStream {
  CoefficientImage coefficients;
  std::optional<QfMap> qf_map;
};

/// Parses a baseline JPEG down to quantized levels (no IDCT).
inline ParsedStream parse(const Bitstream& stream) {
  using namespace detail;
  const auto& d = stream.bytes;
  if (d.empty()) throw DecodeError(0, "empty stream");
  if (d.size() < 2 || d[0] != 0xFF || d[1] != 0xD8) throw DecodeError(0, "missing SOI marker");

  ParsedStream ps;
  auto& ci = ps.coefficients;
  std::array<DecoderTable, 4> dc_tables, ac_tables;
  std::array<bool, 4> quant_defined{};
  bool frame = false;
  bool scanned = false;
  int map_w = 0, map_h = 0;
  std::vector<int> map_vals;
  std::size_t map_filled = 0;

  auto u16 = [&](std::size_t at) -> int {
    if (at + 1 >= d.size()) throw DecodeError(at, "truncated segment");
    return (d[at] << 8) | d[at + 1];
  };

  std::size_t pos = 2;
  while (true) {
    if (pos >= d.size()) throw DecodeError(pos, "missing EOI marker");
    if (d[pos] != 0xFF) throw DecodeError(pos, "expected marker");
    while (pos < d.size() && d[pos] == 0xFF) ++pos;  // fill bytes
    if (pos >= d.size()) throw DecodeError(pos, "truncated marker");
    const std::uint8_t marker = d[pos++];
    if (marker == 0xD9) break;
    if (marker == 0xD8 || (marker >= 0xD0 && marker <= 0xD7))
      throw DecodeError(pos - 1, "unexpected marker");
    const std::size_t seg = pos;
    const int len = u16(seg);
    if (len < 2 || seg + static_cast<std::size_t>(len) > d.size())
      throw DecodeError(seg, "segment length exceeds stream");
    const std::size_t body = seg + 2;
    const std::size_t end = seg + static_cast<std::size_t>(len);

    switch (marker) {
      case 0xDB: {
        std::size_t p = body;
        while (p < end) {
          const int pq = d[p] >> 4, tq = d[p] & 15;
          if (tq > 3) throw DecodeError(p, "quantization table id out of range");
          ++p;
          const std::size_t need = pq ? 128 : 64;
          if (p + need > end) throw DecodeError(p, "truncated quantization table");
          for (int i = 0; i < 64; ++i) {
            const int v = pq ? u16(p + 2 * static_cast<std::size_t>(i)) : d[p + static_cast<std::size_t>(i)];
            if (v == 0) throw DecodeError(p, "zero quantizer");
            ci.quant[tq][kZigzagToNatural[i]] = static_cast<std::uint16_t>(v);
          }
          quant_defined[tq] = true;
          p += need;
        }
        break;
      }
      case 0xC4: {
        std::size_t p = body;
        while (p < end) {
          const int tc = d[p] >> 4, th = d[p] & 15;
          if (tc > 1 || th > 3) throw DecodeError(p, "invalid Huffman table class/id");
          ++p;
          if (p + 16 > end) throw DecodeError(p, "truncated Huffman table");
          HuffmanSpec spec;
          int total = 0;
          for (int i = 0; i < 16; ++i) {
            spec.counts[i] = d[p + static_cast<std::size_t>(i)];
            total += spec.counts[i];
          }
          p += 16;
          if (total > 256 || p + static_cast<std::size_t>(total) > end)
            throw DecodeError(p, "truncated Huffman values");
          spec.values.assign(d.begin() + static_cast<std::ptrdiff_t>(p),
                             d.begin() + static_cast<std::ptrdiff_t>(p) + total);
          p += static_cast<std::size_t>(total);
          (tc == 0 ? dc_tables : ac_tables)[th] = build_decoder_table(spec);
        }
        break;
      }
      case 0xC0:
      case 0xC1: {
        if (len < 8) throw DecodeError(seg, "short SOF segment");
        if (d[body] != 8) throw DecodeError(body, "only 8-bit precision is supported");
        ci.height = u16(body + 1);
        ci.width = u16(body + 3);
        const int nc = d[body + 5];
        if (ci.width == 0 || ci.height == 0) throw DecodeError(body + 1, "zero frame dimension");
        if (nc != 1 && nc != 3) throw DecodeError(body + 5, "only 1 or 3 components are supported");
        if (static_cast<std::size_t>(len) < 8 + 3 * static_cast<std::size_t>(nc))
          throw DecodeError(seg, "short SOF segment");
        ci.components.clear();
        for (int k = 0; k < nc; ++k) {
          const std::size_t p = body + 6 + 3 * static_cast<std::size_t>(k);
          Component c;
          c.id = d[p];
          c.h = d[p + 1] >> 4;
          c.v = d[p + 1] & 15;
          c.quant_table = d[p + 2];
          if (c.h < 1 || c.h > 2 || c.v < 1 || c.v > 2)
            throw DecodeError(p + 1, "unsupported sampling factor");
          if (c.quant_table > 3) throw DecodeError(p + 2, "quantization table id out of range");
          ci.components.push_back(c);
        }
        for (auto& c : ci.components) {
          c.blocks_w = ci.mcus_x() * c.h;
          c.blocks_h = ci.mcus_y() * c.v;
          c.coeffs.assign(static_cast<std::size_t>(c.blocks_w) * c.blocks_h * 64, 0);
        }
        frame = true;
        break;
      }
      case 0xC2:
      case 0xC3:
      case 0xC5:
      case 0xC6:
      case 0xC7:
      case 0xC9:
      case 0xCA:
      case 0xCB:
      case 0xCD:
      case 0xCE:
      case 0xCF:
        throw DecodeError(pos - 1, "only baseline sequential Huffman JPEG is supported");
      case 0xDD: {
        if (u16(body) != 0) throw DecodeError(body, "restart intervals are not supported");
        break;
      }
      case kQfMapMarker: {
        if (len >= 2 + 5 + 1 + 12 && std::equal(kQfMapTag, kQfMapTag + 5, d.begin() + static_cast<std::ptrdiff_t>(body))) {
          if (d[body + 5] != kQfMapVersion) throw DecodeError(body + 5, "unknown JRDQ version");
          const int bw = u16(body + 6), bh = u16(body + 8);
          const std::size_t start = (static_cast<std::size_t>(u16(body + 10)) << 16) | u16(body + 12);
          const std::size_t n = static_cast<std::size_t>(u16(body + 14));
          if (body + 16 + n > end) throw DecodeError(body + 14, "truncated JRDQ payload");
          if (map_vals.empty()) {
            map_w = bw;
            map_h = bh;
            map_vals.assign(static_cast<std::size_t>(bw) * bh, 0);
          }
          if (bw != map_w || bh != map_h || start + n > map_vals.size())
            throw DecodeError(body + 6, "inconsistent JRDQ segments");
          for (std::size_t i = 0; i < n; ++i) map_vals[start + i] = d[body + 16 + i];
          map_filled += n;
        }
        break;
      }
      case 0xDA: {
        if (!frame) throw DecodeError(seg, "scan before frame header");
        const int ns = d[body];
        if (ns < 1 || ns > static_cast<int>(ci.components.size()) ||
            static_cast<std::size_t>(len) < 6 + 2 * static_cast<std::size_t>(ns))
          throw DecodeError(body, "invalid scan header");
        std::vector<int> sel;
        for (int k = 0; k < ns; ++k) {
          const std::size_t p = body + 1 + 2 * static_cast<std::size_t>(k);
          int idx = -1;
          for (std::size_t j = 0; j < ci.components.size(); ++j)
            if (ci.components[j].id == d[p]) idx = static_cast<int>(j);
          if (idx < 0) throw DecodeError(p, "scan references unknown component");
          auto& c = ci.components[static_cast<std::size_t>(idx)];
          c.dc_table = d[p + 1] >> 4;
          c.ac_table = d[p + 1] & 15;
          if (c.dc_table > 3 || c.ac_table > 3 || !dc_tables[c.dc_table].defined ||
              !ac_tables[c.ac_table].defined)
            throw DecodeError(p + 1, "scan references undefined Huffman table");
          if (!quant_defined[c.quant_table])
            throw DecodeError(p, "component references undefined quantization table");
          sel.push_back(idx);
        }
        BitReader br(d, end);
        std::vector<int> pred(ci.components.size(), 0);
        auto decode_block = [&](Component& c, int& p, std::int16_t* zz) {
          const auto& dct = dc_tables[c.dc_table];
          const auto& act = ac_tables[c.ac_table];
          const int s = decode_symbol(br, dct);
          if (s > 11) throw DecodeError(br.position(), "DC magnitude category out of range");
          const int diff = s ? extend(br.bits(s), s) : 0;
          p += diff;
          zz[0] = static_cast<std::int16_t>(p);
          for (int k = 1; k < 64;) {
            const int rs = decode_symbol(br, act);
            const int r = rs >> 4, sz = rs & 15;
            if (sz == 0) {
              if (r == 15) {
                k += 16;
                continue;
              }
              break;
            }
            k += r;
            if (k > 63) throw DecodeError(br.position(), "AC run exceeds block");
            zz[k++] = static_cast<std::int16_t>(extend(br.bits(sz), sz));
          }
        };
        if (ns == 1) {
          auto& c = ci.components[static_cast<std::size_t>(sel[0])];
          const int cw = (ci.width * c.h + 8 * ci.hmax() - 1) / (8 * ci.hmax());
          const int chh = (ci.height * c.v + 8 * ci.vmax() - 1) / (8 * ci.vmax());
          for (int by = 0; by < chh; ++by)
            for (int bx = 0; bx < cw; ++bx) decode_block(c, pred[0], c.block(bx, by));
        } else {
          for (int my = 0; my < ci.mcus_y(); ++my)
            for (int mx = 0; mx < ci.mcus_x(); ++mx)
              for (std::size_t k = 0; k < sel.size(); ++k) {
                auto& c = ci.components[static_cast<std::size_t>(sel[k])];
                for (int v = 0; v < c.v; ++v)
                  for (int h = 0; h < c.h; ++h)
                    decode_block(c, pred[k], c.block(mx * c.h + h, my * c.v + v));
              }
        }
        br.align();
        pos = br.position();
        scanned = true;
        continue;  // pos already past the entropy-coded data
      }
      default:
        break;  // APPn, COM and other segments are skipped
    }
    pos = end;
  }
  if (!scanned) throw DecodeError(pos, "stream contains no scan");
  if (!map_vals.empty()) {
    if (map_filled != map_vals.size()) throw DecodeError(pos, "incomplete JRDQ map");
    try {
      ps.qf_map = QfMap(map_w, map_h, std::move(map_vals));
    } catch (const InvalidArgument& e) {
      throw DecodeError(0, std::string("invalid JRDQ map: ") + e.what());
    }
  }
  return ps;
}

/// Dequantization, IDCT, chroma upsampling (replication) and colour conversion.
inline ImagePlane reconstruct(const CoefficientImage& ci) {
  using namespace detail;
  const int hmax = ci.hmax(), vmax = ci.vmax();
  const int fw = ci.mcus_x() * 8 * hmax, fh = ci.mcus_y() * 8 * vmax;
  std::vector<std::vector<double>> planes;
  for (const auto& c : ci.components) {
    const int pw = c.blocks_w * 8;
    std::vector<double> plane(static_cast<std::size_t>(pw) * c.blocks_h * 8);
    const auto& q = ci.quant[c.quant_table];
    double coef[64], px[64];
    for (int by = 0; by < c.blocks_h; ++by)
      for (int bx = 0; bx < c.blocks_w; ++bx) {
        const std::int16_t* zz = c.block(bx, by);
        for (int i = 0; i < 64; ++i) coef[kZigzagToNatural[i]] = static_cast<double>(zz[i]) * q[kZigzagToNatural[i]];
        idct(coef, px);
        for (int j = 0; j < 8; ++j)
          for (int i = 0; i < 8; ++i)
            plane[static_cast<std::size_t>(by * 8 + j) * pw + bx * 8 + i] = clamp_sample(px[j * 8 + i] + 128.0);
      }
    // Upsample by replication to the full frame.
    if (c.h != hmax || c.v != vmax) {
      const int fx = hmax / c.h, fy = vmax / c.v;
      std::vector<double> up(static_cast<std::size_t>(fw) * fh);
      for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) up[static_cast<std::size_t>(y) * fw + x] = plane[static_cast<std::size_t>(y / fy) * pw + x / fx];
      plane = std::move(up);
    }
    planes.push_back(std::move(plane));
  }
  const int stride = fw;
  if (ci.components.size() == 1) {
    ImagePlane out(ci.width, ci.height, 1);
    const int pw = ci.components[0].blocks_w * 8;
    for (int y = 0; y < ci.height; ++y)
      for (int x = 0; x < ci.width; ++x) out.at(x, y) = clamp_sample(planes[0][static_cast<std::size_t>(y) * pw + x]);
    return out;
  }
  ImagePlane out(ci.width, ci.height, 3);
  for (int y = 0; y < ci.height; ++y)
    for (int x = 0; x < ci.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * stride + x;
      const double yy = planes[0][i], cb = planes[1][i] - 128.0, cr = planes[2][i] - 128.0;
      out.at(x, y, 0) = clamp_sample(yy + 1.402 * cr);
      out.at(x, y, 1) = clamp_sample(yy - 0.344136286 * cb - 0.714136286 * cr);
      out.at(x, y, 2) = clamp_sample(yy + 1.772 * cb);
    }
  return out;
}

inline ImagePlane decode(const Bitstream& stream) {
  ParsedStream ps = parse(stream);
  if (ps.coefficients.width < 8 || ps.coefficients.height < 8)
    throw DecodeError(0, "frame smaller than 8x8");
  return reconstruct(ps.coefficients);
}

inline std::optional<QfMap> read_qfmap(const Bitstream& stream) { return parse(stream).qf_map; }

/// Bits per pixel of a stream for an image of the given size.
inline double measure_rate(const Bitstream& stream, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("measure_rate: image dimensions must be positive");
  return 8.0 * static_cast<double>(stream.size()) / (static_cast<double>(width) * height);
}

/// Returns a copy of the stream with every JRDQ segment removed.
inline Bitstream strip_qfmap(const Bitstream& stream) {
  const auto& d = stream.bytes;
  std::vector<std::uint8_t> out(d.begin(), d.begin() + 2);
  std::size_t pos = 2;
  while (pos + 3 < d.size() && d[pos] == 0xFF && d[pos + 1] != 0xDA) {
    const std::size_t len = (static_cast<std::size_t>(d[pos + 2]) << 8) | d[pos + 3];
    const bool jrdq = d[pos + 1] == detail::kQfMapMarker && pos + 9 <= d.size() &&
                      std::equal(detail::kQfMapTag, detail::kQfMapTag + 5, d.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    if (!jrdq) out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(pos), d.begin() + static_cast<std::ptrdiff_t>(pos + 2 + len));
    pos += 2 + len;
  }
  out.insert(out.end(), d.begin() + static_cast<std::ptrdiff_t>(pos), d.end());
  return Bitstream{std::move(out)};
}

}  // namespace mtjrd::codec

#endif  // MTJRD_CODEC_HPP
