#include <doctest.h>

#include <csetjmp>
#include <cstdio>
#include <fstream>

#include <jpeglib.h>

#include "elegant/image.hpp"
#include "elegant/rng.hpp"
#include "test_util.hpp"

using namespace elegant;

namespace {

ImageU8 noise_image(int w, int h, std::uint64_t seed) {
  ImageU8 im(w, h);
  Rng rng(seed);
  for (auto& p : im.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return im;
}

// Independent JPEG encoder call so the decoder has real input.
std::string encode_jpeg(const ImageU8& im, int quality) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buf = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buf, &size);
  cinfo.image_width = static_cast<JDIMENSION>(im.width);
  cinfo.image_height = static_cast<JDIMENSION>(im.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(im.pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * im.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::string out(reinterpret_cast<char*>(buf), size);
  jpeg_destroy_compress(&cinfo);
  std::free(buf);
  return out;
}

}  // namespace

TEST_CASE("normalize then denormalize is byte-exact for every value") {
  ImageU8 im(256, 1);
  for (int v = 0; v < 256; ++v)
    for (int c = 0; c < 3; ++c) im.at(v, 0, c) = static_cast<std::uint8_t>(v);
  const ImageTensor t = normalize(im);
  for (int v = 0; v < 256; ++v) CHECK(t.at(v, 0, 0) == static_cast<real>(v / 127.5 - 1.0));
  CHECK(t.at(0, 0, 0) == -1);
  CHECK(t.at(255, 0, 0) == 1);
  CHECK(denormalize(t) == im);
}

TEST_CASE("denormalize rounds half away from zero and clamps") {
  CHECK(denormalize_value(real(-1)) == 0);
  CHECK(denormalize_value(real(-3)) == 0);
  CHECK(denormalize_value(real(1)) == 255);
  CHECK(denormalize_value(real(2)) == 255);
  CHECK(denormalize_value(std::nanf("")) == 0);
  // (0 + 1) * 127.5 is exactly 127.5.
  CHECK(denormalize_value(real(0)) == 128);
  CHECK(denormalize_value(real(0.5)) == 191);
}

TEST_CASE("batches convert both ways") {
  const ImageU8 a = noise_image(5, 4, 1), b = noise_image(5, 4, 2);
  const ImageTensor ta = normalize(a), tb = normalize(b);
  const std::vector<ImageTensor> v{ta, tb};
  const Tensor batch = to_batch(v);
  CHECK(batch.shape() == Shape{2, 3, 4, 5});
  CHECK(batch.at(1, 2, 3, 4) == tb.at(4, 3, 2));
  CHECK(from_batch(batch, 0) == ta);
  CHECK(from_batch(batch, 1) == tb);
  CHECK_THROWS_AS(from_batch(batch, 2), IndexError);
  const std::vector<ImageTensor> mixed{ta, normalize(noise_image(4, 4, 3))};
  CHECK_THROWS_AS(to_batch(mixed), ShapeError);
}

TEST_CASE("PNG round-trips losslessly") {
  const ImageU8 im = noise_image(37, 23, 4);
  CHECK(decode_image(encode_png(im)) == im);
  test::TempDir dir("png");
  write_png(dir / "x.png", im);
  CHECK(read_image(dir / "x.png") == im);
}

TEST_CASE("JPEG input is decoded") {
  ImageU8 im(32, 24);
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 32; ++x) {
      im.at(x, y, 0) = static_cast<std::uint8_t>(8 * x);
      im.at(x, y, 1) = static_cast<std::uint8_t>(10 * y);
      im.at(x, y, 2) = 128;
    }
  const ImageU8 back = decode_image(encode_jpeg(im, 95));
  REQUIRE(back.width == 32);
  REQUIRE(back.height == 24);
  double err = 0;
  for (std::size_t k = 0; k < im.pixels.size(); ++k) err += std::abs(int(im.pixels[k]) - int(back.pixels[k]));
  CHECK(err / static_cast<double>(im.pixels.size()) < 4.0);
}

TEST_CASE("bad image data raises IoError") {
  CHECK_THROWS_AS(decode_image("not an image"), IoError);
  std::string png = encode_png(noise_image(8, 8, 5));
  CHECK_THROWS_AS(decode_image(png.substr(0, png.size() / 2)), IoError);
  CHECK_THROWS_AS(read_image("/nonexistent/file.png"), IoError);
}

TEST_CASE("resize and crop") {
  const ImageU8 im = noise_image(10, 6, 6);
  CHECK(resize_bilinear(im, 10, 6) == im);
  const ImageU8 flat(7, 7, 99);
  const ImageU8 up = resize_bilinear(flat, 21, 14);
  CHECK(up.width == 21);
  for (auto p : up.pixels) CHECK(p == 99);
  const ImageU8 sq = center_square_crop(im);
  CHECK(sq.width == 6);
  CHECK(sq.height == 6);
  CHECK(sq.at(0, 0, 1) == im.at(2, 0, 1));
  CHECK(sq.at(5, 5, 2) == im.at(7, 5, 2));
  CHECK_THROWS_AS(resize_bilinear(im, 0, 3), ShapeError);
}
