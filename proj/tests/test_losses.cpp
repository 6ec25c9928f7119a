#include <doctest.h>

#include <cmath>
#include <numbers>

#include "elegant/losses.hpp"
#include "elegant/training.hpp"

using namespace elegant;

namespace {

const double kLog2 = std::numbers::ln2;

ScaleScores uniform_scores(double a, double b, double c, double d, std::size_t n = 3) {
  return {std::vector<double>(n, a), std::vector<double>(n, b), std::vector<double>(n, c), std::vector<double>(n, d)};
}

}  // namespace

TEST_CASE("uninformative scores give log 2 per term") {
  const ScaleScores s = uniform_scores(0.5, 0.5, 0.5, 0.5);
  CHECK(discriminator_scale_loss(s, 1e-8) == doctest::Approx(4 * kLog2).epsilon(1e-12));
  const DiscriminatorLoss d = discriminator_loss(s, s, 1e-8);
  CHECK(d.total == doctest::Approx(8 * kLog2).epsilon(1e-12));
  CHECK(d.total == d.d1 + d.d2);
  CHECK(generator_adversarial_loss(s.c, s.d, s.c, s.d, 1e-8) == doctest::Approx(4 * kLog2).epsilon(1e-12));
}

TEST_CASE("discriminator loss against hand-computed values") {
  const ScaleScores s{{0.9, 0.8}, {0.7}, {0.2, 0.4}, {0.1}};
  const double want = -(std::log(0.9) + std::log(0.8)) / 2 - std::log(0.7) - (std::log(0.8) + std::log(0.6)) / 2 -
                      std::log(0.9);
  CHECK(discriminator_scale_loss(s, 1e-8) == doctest::Approx(want).epsilon(1e-12));
  // A perfect discriminator pays nothing.
  CHECK(discriminator_scale_loss(uniform_scores(1, 1, 0, 0), 1e-8) == 0);
}

TEST_CASE("log arguments are clamped at eps") {
  const std::vector<double> zeros(2, 0.0), ones(2, 1.0);
  CHECK(neg_log_mean(zeros, 1e-8) == doctest::Approx(-std::log(1e-8)));
  CHECK(neg_log_complement_mean(ones, 1e-4) == doctest::Approx(-std::log(1e-4)));
  CHECK(std::isfinite(discriminator_scale_loss(uniform_scores(0, 0, 1, 1), 1e-8)));
}

TEST_CASE("scores outside [0, 1] or empty batches are rejected") {
  const std::vector<double> bad{0.5, 1.5}, nan{std::nan("")}, empty;
  CHECK_THROWS_AS(neg_log_mean(bad, 1e-8), ContractError);
  CHECK_THROWS_AS(neg_log_mean(nan, 1e-8), ContractError);
  CHECK_THROWS_AS(neg_log_complement_mean(empty, 1e-8), ContractError);
}

TEST_CASE("reconstruction loss is the sum of two mean absolute errors") {
  const Tensor a({1, 1, 1, 4}, std::vector<real>{0, 0.5f, -1, 1});
  const Tensor ar({1, 1, 1, 4}, std::vector<real>{0.5f, 0.5f, -0.5f, 0});
  const Tensor b({1, 1, 1, 2}, std::vector<real>{0.25f, 0});
  const Tensor br({1, 1, 1, 2}, std::vector<real>{0, 0});
  CHECK(reconstruction_loss(a, ar, b, br) == doctest::Approx((0.5 + 0 + 0.5 + 1) / 4 + 0.25 / 2));
  CHECK(reconstruction_loss(a, a, b, b) == 0);
  CHECK_THROWS_AS(reconstruction_loss(a, b, b, b), ShapeError);
}

TEST_CASE("generator loss weights its terms") {
  TrainConfig c;
  c.recon_weight = 10;
  c.adv_weight = 0.5;
  CHECK(generator_loss(0.2, 3.0, c) == doctest::Approx(3.5));
}
