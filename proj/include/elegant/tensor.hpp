#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "elegant/abi.hpp"
#include "elegant/error.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

// Scalar type of every tensor. float in production builds; the gradient-check
// build compiles the same sources with double.
using real = ELEGANT_REAL;

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

// Dense row-major tensor. Images and feature maps are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> data);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  real* data() noexcept { return data_.data(); }
  const real* data() const noexcept { return data_.data(); }
  std::span<real> span() noexcept { return data_; }
  std::span<const real> span() const noexcept { return data_; }
  std::vector<real>& values() noexcept { return data_; }
  const std::vector<real>& values() const noexcept { return data_; }

  real& operator[](std::size_t i) noexcept { return data_[i]; }
  real operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW accessors; no bounds checks.
  real& at(int n, int c, int h, int w) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  real at(int n, int c, int h, int w) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(real s);

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool operator==(const Tensor& other) const noexcept {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  // Copy of sample `n` (first axis) as a batch of one.
  Tensor sample(int n) const;

 private:
  Shape shape_;
  std::vector<real> data_;
};

std::size_t shape_numel(const Shape& shape);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Concatenate NCHW tensors along channels.
Tensor concat_channels(std::span<const Tensor* const> parts);
// Split NCHW tensor along channels into the given channel counts.
std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> channels);

// Stack equally shaped batches along the first axis.
Tensor concat_batch(std::span<const Tensor* const> parts);

}  // namespace ELEGANT_ABI
}  // namespace elegant
