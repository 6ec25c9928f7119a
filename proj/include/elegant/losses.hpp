#pragma once

#include <span>
#include <vector>

#include "elegant/tensor.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

// Discriminator scores of one scale for the four images of a step.
struct ScaleScores {
  std::vector<double> a;  // real A | Y^A
  std::vector<double> b;  // real B | Y^B
  std::vector<double> c;  // generated C | Y^C
  std::vector<double> d;  // generated D | Y^D
};

struct DiscriminatorLoss {
  double d1 = 0;
  double d2 = 0;
  double total = 0;
};

// -mean log s with the argument clamped to >= eps.
double neg_log_mean(std::span<const double> scores, double eps);
// -mean log(1 - s), clamped likewise.
double neg_log_complement_mean(std::span<const double> scores, double eps);

// Standard adversarial loss of one discriminator: real A, B scored high,
// generated C, D scored low. Scores must lie in [0, 1].
double discriminator_scale_loss(const ScaleScores& s, double eps);
DiscriminatorLoss discriminator_loss(const ScaleScores& scale1, const ScaleScores& scale2, double eps);

// mean |A - A'| + mean |B - B'|
double reconstruction_loss(const Tensor& a, const Tensor& a_rec, const Tensor& b, const Tensor& b_rec);

// -mean log D1(C) - mean log D1(D) - mean log D2(C) - mean log D2(D)
double generator_adversarial_loss(std::span<const double> c1, std::span<const double> d1, std::span<const double> c2,
                                  std::span<const double> d2, double eps);

struct TrainConfig;
double generator_loss(double reconstruction, double adversarial, const TrainConfig& config);

}  // namespace ELEGANT_ABI
}  // namespace elegant
