#include "elegant/losses.hpp"

#include <cmath>

#include "elegant/training.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

void check_scores(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("adversarial loss: empty score batch");
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0)) throw ContractError("adversarial loss: score " + std::to_string(s) + " outside [0, 1]");
}

}  // namespace

double neg_log_mean(std::span<const double> scores, double eps) {
  check_scores(scores);
  double acc = 0;
  for (double s : scores) acc += std::log(std::max(s, eps));
  return -acc / static_cast<double>(scores.size());
}

double neg_log_complement_mean(std::span<const double> scores, double eps) {
  check_scores(scores);
  double acc = 0;
  for (double s : scores) acc += std::log(std::max(1.0 - s, eps));
  return -acc / static_cast<double>(scores.size());
}

double discriminator_scale_loss(const ScaleScores& s, double eps) {
  return neg_log_mean(s.a, eps) + neg_log_complement_mean(s.c, eps) + neg_log_mean(s.b, eps) +
         neg_log_complement_mean(s.d, eps);
}

DiscriminatorLoss discriminator_loss(const ScaleScores& scale1, const ScaleScores& scale2, double eps) {
  DiscriminatorLoss out;
  out.d1 = discriminator_scale_loss(scale1, eps);
  out.d2 = discriminator_scale_loss(scale2, eps);
  out.total = out.d1 + out.d2;
  return out;
}

double reconstruction_loss(const Tensor& a, const Tensor& a_rec, const Tensor& b, const Tensor& b_rec) {
  require_same_shape(a, a_rec, "reconstruction_loss(A, A')");
  require_same_shape(b, b_rec, "reconstruction_loss(B, B')");
  if (a.empty() || b.empty()) throw ShapeError("reconstruction_loss: empty images");
  auto mae = [](const Tensor& x, const Tensor& y) {
    double acc = 0;
    for (std::size_t k = 0; k < x.numel(); ++k) acc += std::abs(static_cast<double>(x[k]) - y[k]);
    return acc / static_cast<double>(x.numel());
  };
  return mae(a, a_rec) + mae(b, b_rec);
}

double generator_adversarial_loss(std::span<const double> c1, std::span<const double> d1, std::span<const double> c2,
                                  std::span<const double> d2, double eps) {
  return neg_log_mean(c1, eps) + neg_log_mean(d1, eps) + neg_log_mean(c2, eps) + neg_log_mean(d2, eps);
}

double generator_loss(double reconstruction, double adversarial, const TrainConfig& config) {
  return config.recon_weight * reconstruction + config.adv_weight * adversarial;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
