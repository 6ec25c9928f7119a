#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elegant/tensor.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

// 8-bit RGB, row-major HWC.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const ImageU8&) const = default;
};

// Real-valued RGB in [-1, 1], row-major HWC.
struct ImageTensor {
  int width = 0;
  int height = 0;
  std::vector<real> pixels;

  real at(int x, int y, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const ImageTensor&) const = default;
};

// v -> v / 127.5 - 1
ImageTensor normalize(const ImageU8& image);
// Inverse of normalize; rounds half away from zero and clamps to [0, 255].
ImageU8 denormalize(const ImageTensor& image);
std::uint8_t denormalize_value(real v);

// Batches of equally sized images, NCHW.
Tensor to_batch(std::span<const ImageTensor> images);
ImageTensor from_batch(const Tensor& batch, int index);

// PNG read/write and JPEG read (by content sniffing).
ImageU8 decode_image(std::string_view bytes);
std::string encode_png(const ImageU8& image);
ImageU8 read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& image);

ImageU8 resize_bilinear(const ImageU8& image, int width, int height);
ImageU8 center_square_crop(const ImageU8& image);

}  // namespace ELEGANT_ABI
}  // namespace elegant
