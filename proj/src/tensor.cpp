#include "elegant/tensor.hpp"

#include <cstring>

namespace elegant {
inline namespace ELEGANT_ABI {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(real s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor Tensor::sample(int n) const {
  if (shape_.empty() || n < 0 || n >= shape_[0]) throw IndexError("sample index out of range");
  Shape s = shape_;
  s[0] = 1;
  const std::size_t stride = data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<real> d(data_.begin() + static_cast<std::ptrdiff_t>(stride * n),
                      data_.begin() + static_cast<std::ptrdiff_t>(stride * (n + 1)));
  return Tensor(std::move(s), std::move(d));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Tensor& first = *parts[0];
  if (first.rank() != 4) throw ShapeError("concat_channels expects NCHW");
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int channels = 0;
  for (const Tensor* p : parts) {
    if (p->rank() != 4 || p->dim(0) != n || p->dim(2) != h || p->dim(3) != w)
      throw ShapeError("concat_channels: " + shape_string(p->shape()) + " incompatible with " +
                       shape_string(first.shape()));
    channels += p->dim(1);
  }
  Tensor out({n, channels, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  real* dst = out.data();
  for (int b = 0; b < n; ++b) {
    for (const Tensor* p : parts) {
      const std::size_t chunk = plane * p->dim(1);
      std::memcpy(dst, p->data() + chunk * b, chunk * sizeof(real));
      dst += chunk;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const int> channels) {
  if (x.rank() != 4) throw ShapeError("split_channels expects NCHW");
  const int total = std::accumulate(channels.begin(), channels.end(), 0);
  if (total != x.dim(1))
    throw ShapeError("split_channels: parts sum to " + std::to_string(total) + " but tensor has " +
                     std::to_string(x.dim(1)) + " channels");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Tensor> out;
  out.reserve(channels.size());
  for (int c : channels) out.emplace_back(Shape{n, c, h, w});
  const real* src = x.data();
  for (int b = 0; b < n; ++b) {
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const std::size_t chunk = plane * channels[k];
      std::memcpy(out[k].data() + chunk * b, src, chunk * sizeof(real));
      src += chunk;
    }
  }
  return out;
}

Tensor concat_batch(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw ContractError("concat_batch: no inputs");
  Shape s = parts[0]->shape();
  int n = 0;
  for (const Tensor* p : parts) {
    Shape a = p->shape(), b = s;
    a[0] = b[0] = 0;
    if (a != b) throw ShapeError("concat_batch: incompatible " + shape_string(p->shape()));
    n += p->dim(0);
  }
  s[0] = n;
  std::vector<real> data;
  data.reserve(shape_numel(s));
  for (const Tensor* p : parts) data.insert(data.end(), p->values().begin(), p->values().end());
  return Tensor(std::move(s), std::move(data));
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
