#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <random>

#include "mtjrd/codec.hpp"
#include "mtjrd/metrics.hpp"
#include "mtjrd/vcm.hpp"
#include "support.hpp"

#ifdef MTJRD_HAVE_LIBJPEG
#include <jpeglib.h>
#endif

using namespace mtjrd;
using namespace mtjrd::codec;

namespace {

int max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  int m = 0;
  for (std::size_t i = 0; i < a.samples().size(); ++i) m = std::max(m, std::abs(int(a.samples()[i]) - int(b.samples()[i])));
  return m;
}

#ifdef MTJRD_HAVE_LIBJPEG
ImagePlane libjpeg_decode(const Bitstream& s) {
  jpeg_decompress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, s.bytes.data(), static_cast<unsigned long>(s.bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.do_fancy_upsampling = FALSE;
  cinfo.dct_method = JDCT_FLOAT;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width), h = static_cast<int>(cinfo.output_height);
  const int c = cinfo.output_components;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * c);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * c;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  ImagePlane out(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) out.at(x, y, k) = px[(static_cast<std::size_t>(y) * w + x) * c + k];
  return out;
}

Bitstream libjpeg_encode(const ImagePlane& img, int quality) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = img.channels();
  cinfo.in_color_space = img.channels() == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * img.channels());
  while (cinfo.next_scanline < cinfo.image_height) {
    const int y = static_cast<int>(cinfo.next_scanline);
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < img.channels(); ++k) row[static_cast<std::size_t>(x) * img.channels() + k] = img.at(x, y, k);
    JSAMPROW r = row.data();
    jpeg_write_scanlines(&cinfo, &r, 1);
  }
  jpeg_finish_compress(&cinfo);
  Bitstream out{std::vector<std::uint8_t>(buf, buf + size)};
  std::free(buf);
  jpeg_destroy_compress(&cinfo);
  return out;
}
#endif

}  // namespace

TEST(Tables, IjgScaling) {
  const auto t50 = qf_to_tables(50);
  for (int i = 0; i < 64; ++i) {
    EXPECT_EQ(t50.luma[i], kBaseLuma[i]);
    EXPECT_EQ(t50.chroma[i], kBaseChroma[i]);
  }
  const auto t100 = qf_to_tables(100);
  EXPECT_TRUE(std::all_of(t100.luma.begin(), t100.luma.end(), [](int v) { return v == 1; }));
  const auto t1 = qf_to_tables(1);
  EXPECT_TRUE(std::all_of(t1.chroma.begin(), t1.chroma.end(), [](int v) { return v == 255; }));
  EXPECT_EQ(qf_to_tables(75).luma[0], (16 * 50 + 50) / 100);
  EXPECT_EQ(qf_to_tables(25).luma[0], (16 * 200 + 50) / 100);
  EXPECT_THROW(qf_to_tables(0), InvalidArgument);
  EXPECT_THROW(qf_to_tables(101), InvalidArgument);
}

TEST(Codec, PsnrRisesWithQualityAndRateToo) {
  const auto img = test_support::regression_image();
  double prev_psnr = 0, prev_bpp = 0;
  for (int qf : {10, 30, 50, 75, 90, 100}) {
    const auto s = encode_uniform(img, qf);
    const auto rec = decode(s);
    EXPECT_EQ(rec.width(), img.width());
    const double p = metrics::psnr(img, rec), bpp = measure_rate(s, img.width(), img.height());
    EXPECT_GT(p, prev_psnr) << qf;
    EXPECT_GT(bpp, prev_bpp) << qf;
    prev_psnr = p;
    prev_bpp = bpp;
  }
  EXPECT_GT(prev_psnr, 40.0);
}

TEST(Codec, OddSizesAndGrayscale) {
  std::mt19937 rng(3);
  ImagePlane img(37, 21, 3), gray(19, 9, 1);
  for (int y = 0; y < 21; ++y)
    for (int x = 0; x < 37; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(60 + 3 * x + 2 * y + 20 * c);
  for (auto& v : gray.samples()) v = static_cast<std::uint8_t>(rng() % 255);
  const auto rec = decode(encode_uniform(img, 90));
  EXPECT_EQ(rec.width(), 37);
  EXPECT_EQ(rec.height(), 21);
  EXPECT_GT(metrics::psnr(img, rec), 35);
  const auto g = decode(encode_uniform(gray, 100));
  EXPECT_EQ(g.channels(), 1);
  EXPECT_LE(max_abs_diff(g, gray), 2);
}

TEST(Codec, UniformMapEqualsUniformEncoding) {
  const auto img = test_support::regression_image();
  const auto a = encode_uniform(img, 60);
  const auto b = encode(img, QfMap::uniform(img.width(), img.height(), 60));
  EXPECT_EQ(decode(a), decode(b));
}

TEST(Codec, QfMapRoundTripAndStrip) {
  const auto img = test_support::regression_image();
  const std::vector<QfRegion> regions = {{BoundingBox(40, 40, 60, 50), 85}, {BoundingBox(90, 60, 30, 30), 70}};
  const auto map = rasterize_qfmap(regions, 20, img.width(), img.height());
  const auto s = encode(img, map);
  const auto back = read_qfmap(s);
  ASSERT_TRUE(back);
  EXPECT_EQ(*back, map);
  const auto stripped = strip_qfmap(s);
  EXPECT_LT(stripped.size(), s.size());
  EXPECT_FALSE(read_qfmap(stripped));
  EXPECT_EQ(decode(stripped), decode(s));
  EXPECT_TRUE(read_qfmap(encode_uniform(img, 50))->is_uniform());
}

TEST(QfMapRaster, MaxOnOverlapAndTouchedBlocks) {
  const std::vector<QfRegion> regions = {{BoundingBox(0, 0, 17, 10), 60}, {BoundingBox(15, 0, 10, 10), 80}};
  const auto m = rasterize_qfmap(regions, 10, 64, 40);
  EXPECT_EQ(m.blocks_w(), 4);
  EXPECT_EQ(m.blocks_h(), 3);
  EXPECT_EQ(m.at(0, 0), 80);
  EXPECT_EQ(m.at(1, 0), 80);
  EXPECT_EQ(m.at(2, 0), 10);
  EXPECT_EQ(m.at(0, 1), 10);
  EXPECT_EQ(m.file_qf(), 80);
  EXPECT_THROW(rasterize_qfmap(regions, 0, 64, 40), InvalidArgument);
  EXPECT_THROW(QfMap(2, 2, {1, 2, 3}), InvalidArgument);
}

TEST(Codec, AdaptiveMapDominatesUniformBackground) {
  const auto img = test_support::regression_image();
  const BoundingBox box(64, 64, 96, 96);
  const auto map = rasterize_qfmap(std::vector<QfRegion>{{box, 90}}, 20, img.width(), img.height());
  const auto s_map = encode(img, map), s_lo = encode_uniform(img, 20), s_hi = encode_uniform(img, 90);
  const auto r_map = decode(s_map), r_lo = decode(s_lo), r_hi = decode(s_hi);
  EXPECT_GT(metrics::region_psnr(img, r_map, box), metrics::region_psnr(img, r_lo, box) + 3);
  EXPECT_LT(s_map.size(), s_hi.size());
  EXPECT_GT(s_map.size(), s_lo.size());
}

TEST(Codec, CropOfAlignedRectIsExact) {
  const auto img = test_support::regression_image();
  for (int qf : {25, 50, 90}) {
    const auto full = decode(encode_uniform(img, qf));
    for (const auto& box : {BoundingBox(20, 30, 40, 50), BoundingBox(200, 210, 56, 46), BoundingBox(3, 3, 4, 4)}) {
      const auto a = vcm::aligned_rect(box, img.width(), img.height());
      EXPECT_EQ(a.x0 % 16, 0);
      EXPECT_EQ(a.y0 % 16, 0);
      const auto crop = metrics::crop(img, a);
      EXPECT_EQ(decode(encode_uniform(crop, qf)), metrics::crop(full, a)) << qf;
    }
  }
}

TEST(Codec, MalformedStreamsRaiseDecodeError) {
  const auto img = test_support::regression_image();
  const auto s = encode_uniform(img, 50);
  EXPECT_THROW(decode(Bitstream{}), DecodeError);
  EXPECT_THROW(decode(Bitstream{{0x00, 0x01, 0x02}}), DecodeError);
  for (std::size_t cut : {std::size_t{4}, std::size_t{100}, s.size() / 2}) {
    Bitstream t{std::vector<std::uint8_t>(s.bytes.begin(), s.bytes.begin() + static_cast<std::ptrdiff_t>(cut))};
    EXPECT_THROW(decode(t), DecodeError) << cut;
  }
  try {
    decode(Bitstream{{0xFF, 0xD8, 0xFF, 0xC2, 0x00}});
    FAIL();
  } catch (const DecodeError& e) {
    EXPECT_GE(e.offset(), 2u);
  }
}

#ifdef MTJRD_HAVE_LIBJPEG
TEST(Conformance, LibjpegDecodesOurStreams) {
  const auto img = test_support::regression_image();
  for (int qf : {20, 50, 95}) {
    const auto s = encode_uniform(img, qf);
    EXPECT_LE(max_abs_diff(libjpeg_decode(s), decode(s)), 2) << qf;
    EXPECT_GT(metrics::psnr(libjpeg_decode(s), decode(s)), 50) << qf;
  }
  const auto map = rasterize_qfmap(std::vector<QfRegion>{{BoundingBox(30, 30, 90, 90), 80}}, 25, img.width(), img.height());
  const auto s = encode(img, map);
  EXPECT_LE(max_abs_diff(libjpeg_decode(s), decode(s)), 2);
}

TEST(Conformance, WeDecodeLibjpegStreams) {
  const auto img = test_support::regression_image();
  for (int q : {30, 75}) {
    const auto s = libjpeg_encode(img, q);
    EXPECT_LE(max_abs_diff(libjpeg_decode(s), decode(s)), 2) << q;
    EXPECT_GT(metrics::psnr(libjpeg_decode(s), decode(s)), 50) << q;
    // identical tables to ours
    EXPECT_EQ(parse(s).coefficients.quant[0], qf_to_tables(q).luma);
  }
}
#endif
