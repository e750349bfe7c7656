#ifndef MTJRD_IMAGE_IO_HPP
#define MTJRD_IMAGE_IO_HPP

#include <png.h>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mtjrd/core.hpp"

namespace mtjrd::io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("short write on " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file(path, bytes.data(), bytes.size());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// PPM / PGM (binary P6 / P5, maxval 255)
// ---------------------------------------------------------------------------

inline ImagePlane decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > (1 << 24)) throw ParseError(name, "PNM header value too large");
    }
    if (!any) throw ParseError(name, "malformed PNM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw ParseError(name, "not a binary PPM/PGM (P5/P6)");
  const int channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw ParseError(name, "only 8-bit PNM (maxval 255) is supported");
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < pos + n) throw ParseError(name, "truncated PNM raster");
  return ImagePlane(w, h, channels,
                    std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                              bytes.begin() + static_cast<std::ptrdiff_t>(pos + n)));
}

inline std::vector<std::uint8_t> encode_pnm(const ImagePlane& img) {
  std::string header = (img.channels() == 3 ? "P6\n" : "P5\n") + std::to_string(img.width()) +
                       " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.samples().begin(), img.samples().end());
  return out;
}

// ---------------------------------------------------------------------------
// PNG (libpng simplified API)
// ---------------------------------------------------------------------------

inline ImagePlane decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw ParseError(name, std::string("PNG: ") + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ParseError(name, "PNG: " + msg);
  }
  return ImagePlane(static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3,
                    std::move(buf));
}

inline std::vector<std::uint8_t> encode_png(const ImagePlane& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.samples().data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.samples().data(), 0, nullptr))
    throw IoError(std::string("PNG encode: ") + image.message);
  out.resize(size);
  return out;
}

inline bool has_png_signature(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  return bytes.size() >= 8 && std::equal(sig, sig + 8, bytes.begin());
}

/// Reads PPM/PGM or PNG, chosen by content.
inline ImagePlane read_image(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  if (has_png_signature(bytes)) return decode_png(bytes, path.string());
  return decode_pnm(bytes, path.string());
}

/// Writes PNG for a .png extension, PPM/PGM otherwise.
inline void write_image(const std::filesystem::path& path, const ImagePlane& img) {
  if (path.extension() == ".png")
    write_file(path, encode_png(img));
  else
    write_file(path, encode_pnm(img));
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

inline Mask read_mask_png(const std::filesystem::path& path) {
  ImagePlane img = read_image(path);
  Mask m(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.set(x, y, img.at(x, y, 0) >= 128);
  return m;
}

inline void write_mask_png(const std::filesystem::path& path, const Mask& m) {
  ImagePlane img(m.width(), m.height(), 1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) img.at(x, y) = m.at(x, y) ? 255 : 0;
  write_file(path, encode_png(img));
}

/// Run lengths in column-major order, starting with a (possibly empty) run of zeros.
inline std::vector<std::uint32_t> mask_to_runs(const Mask& m) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t len = 0;
  for (int x = 0; x < m.width(); ++x)
    for (int y = 0; y < m.height(); ++y) {
      const std::uint8_t v = m.at(x, y) ? 1 : 0;
      if (v != current) {
        runs.push_back(len);
        len = 0;
        current = v;
      }
      ++len;
    }
  runs.push_back(len);
  return runs;
}

inline Mask runs_to_mask(const std::vector<std::uint32_t>& runs, int width, int height) {
  Mask m(width, height);
  const std::size_t total = static_cast<std::size_t>(width) * height;
  std::size_t idx = 0;
  bool value = false;
  for (auto r : runs) {
    if (idx + r > total) throw InvalidArgument("RLE: runs exceed mask size");
    if (value)
      for (std::size_t k = idx; k < idx + r; ++k)
        m.set(static_cast<int>(k / height), static_cast<int>(k % height), true);
    idx += r;
    value = !value;
  }
  if (idx != total) throw InvalidArgument("RLE: runs do not cover the mask");
  return m;
}

/// COCO compressed RLE string (the "counts" field of pycocotools).
inline std::string runs_to_coco_string(const std::vector<std::uint32_t>& runs) {
  std::string s;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    long long x = runs[i];
    if (i > 2) x -= static_cast<long long>(runs[i - 2]);
    bool more = true;
    while (more) {
      long long c = x & 0x1f;
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

inline std::vector<std::uint32_t> coco_string_to_runs(const std::string& s) {
  std::vector<long long> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw InvalidArgument("RLE: truncated counts string");
      const long long c = static_cast<long long>(s[p]) - 48;
      if (c < 0 || c > 63) throw InvalidArgument("RLE: invalid character in counts string");
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    counts.push_back(x);
  }
  std::vector<std::uint32_t> runs;
  runs.reserve(counts.size());
  for (auto c : counts) {
    if (c < 0) throw InvalidArgument("RLE: negative run length");
    runs.push_back(static_cast<std::uint32_t>(c));
  }
  return runs;
}

}  // namespace mtjrd::io

#endif  // MTJRD_IMAGE_IO_HPP
