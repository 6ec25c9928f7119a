#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "elegant/data.hpp"
#include "elegant/model.hpp"
#include "elegant/rng.hpp"
#include "elegant/tensor.hpp"
#include "elegant/training.hpp"

namespace test {

using namespace elegant;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t k = 0; k < t.numel(); ++k) t[k] = static_cast<real>(lo + (hi - lo) * rng.uniform());
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(double(a[k]) - double(b[k])));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(double(a[k])));
  return m;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) s += double(a[k]) * double(b[k]);
  return s;
}

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "elegant") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline ModelConfig tiny_config(int n = 2) {
  ModelConfig c;
  c.n_attributes = n;
  c.image_size = 16;
  c.depth = 2;
  c.base_channels = 4;
  c.latent_channels = 4 * n;
  return c;
}

inline TrainConfig tiny_train(std::int64_t steps = 4) {
  TrainConfig t;
  t.batch_size = 2;
  t.total_steps = steps;
  t.checkpoint_every = 0;
  t.seed = 11;
  return t;
}

// Batch with bit `attribute` forced to `bit`, the rest random.
inline Batch random_batch(int count, int size, int n, int attribute, std::uint8_t bit, std::uint64_t seed) {
  Batch b;
  b.images = random_tensor({count, 3, size, size}, seed, -0.9, 0.9);
  Rng rng(seed + 17);
  for (int j = 0; j < count; ++j) {
    AttributeLabelVector y;
    for (int i = 0; i < n; ++i) y.bits.push_back(rng.uniform() < 0.5);
    b.labels.push_back(flip_label(y, attribute, bit));
  }
  return b;
}

}  // namespace test
