#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "elegant/training.hpp"

static_assert(sizeof(elegant::real) == sizeof(double), "gradcheck.cpp must be built with ELEGANT_REAL=double");

namespace elegant::testing {
namespace {

double rel_error(double a, double n, double floor) {
  const double scale = std::max({std::abs(a), std::abs(n), floor});
  return std::abs(a - n) / scale;
}

Batch make_batch(Rng& rng, int count, int size, int n_attributes, int attribute, std::uint8_t bit) {
  Batch b;
  b.images = Tensor({count, 3, size, size});
  // Inside (-1/2, 1/2) the output clamp stays inactive for small residuals.
  for (std::size_t k = 0; k < b.images.numel(); ++k) b.images[k] = rng.uniform() - 0.5;
  for (int j = 0; j < count; ++j) {
    AttributeLabelVector y;
    for (int i = 0; i < n_attributes; ++i) y.bits.push_back(rng.uniform() < 0.5);
    b.labels.push_back(flip_label(y, attribute, bit));
  }
  return b;
}

struct Margins {
  double kink = 1e300;

  void kink_at(double distance) { kink = std::min(kink, std::abs(distance)); }
};

void block_margins(const std::vector<BlockCache>& blocks, const std::vector<ConvBlock::Activation>& acts,
                   Margins& m) {
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const BlockCache& c = blocks[k];
    if (acts[k] == ConvBlock::Activation::LeakyRelu)
      for (std::size_t j = 0; j < c.pre_activation.numel(); ++j) m.kink_at(c.pre_activation[j]);
  }
}

// Distance of the test point from the kinks of both objectives.
Margins point_margins(const Model& model, const Batch& a, const Batch& b, int attribute) {
  const GeneratorForward f = generator_forward(model, a, b, attribute);
  Margins m;
  const auto leaky = ConvBlock::Activation::LeakyRelu;
  const std::vector<ConvBlock::Activation> enc(f.enc_a.blocks.size(), leaky);
  std::vector<ConvBlock::Activation> dec(f.dec_aa.blocks.size(), leaky);
  dec.back() = ConvBlock::Activation::ScaledTanh;
  for (const auto* p : {&f.enc_a, &f.enc_b}) block_margins(p->blocks, enc, m);
  for (const auto* p : {&f.dec_aa, &f.dec_ca, &f.dec_bb, &f.dec_db}) block_margins(p->blocks, dec, m);

  for (std::size_t k = 0; k < a.images.numel(); ++k) {
    m.kink_at(f.a_rec[k] - a.images[k]);
    m.kink_at(1 - std::abs(a.images[k] + f.ra[k]));
    m.kink_at(1 - std::abs(a.images[k] + f.rc[k]));
  }
  for (std::size_t k = 0; k < b.images.numel(); ++k) {
    m.kink_at(f.b_rec[k] - b.images[k]);
    m.kink_at(1 - std::abs(b.images[k] + f.rb[k]));
    m.kink_at(1 - std::abs(b.images[k] + f.rd[k]));
  }

  const Tensor* parts[] = {&a.images, &b.images, &f.c, &f.d};
  const Tensor images = concat_batch(parts);
  std::vector<AttributeLabelVector> labels = f.ya;
  for (const auto* y : {&f.yb, &f.yc, &f.yd}) labels.insert(labels.end(), y->begin(), y->end());
  for (const Discriminator* d : {&model.d1, &model.d2}) {
    Discriminator::Pass pass;
    d->forward(images, labels, &pass);
    block_margins(pass.blocks, std::vector<ConvBlock::Activation>(pass.blocks.size(), leaky), m);
  }
  return m;
}

}  // namespace

GradCheckResult run_gradient_check(const GradCheckOptions& o) {
  ModelConfig mc;
  mc.n_attributes = 2;
  mc.image_size = o.image_size;
  mc.depth = o.depth;
  mc.base_channels = o.base_channels;
  mc.latent_channels = o.latent_channels;
  mc.leaky_slope = o.leaky_slope;
  TrainConfig tc;
  tc.recon_weight = o.recon_weight;
  tc.adv_weight = o.adv_weight;

  GradCheckResult result;
  Model model;
  std::vector<Batch> batches;
  for (;;) {
    if (result.attempts == o.max_attempts)
      throw NumericsError("gradient check: no well-conditioned test point in " + std::to_string(o.max_attempts) +
                          " draws");
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(result.attempts++);
    model = Model::create(mc, seed, InitOptions{false});
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + 1);
    if (o.shifted_norms)
      for (auto& [net, params] : model.networks())
        for (auto& p : *params) {
          const bool alpha = p.name.ends_with(".norm.alpha"), beta = p.name.ends_with(".norm.beta");
          for (std::size_t j = 0; j < p.value.numel(); ++j) {
            if (alpha) p.value[j] = 0.2 + 0.2 * rng.uniform();
            if (beta) p.value[j] = (rng.uniform() < 0.5 ? -1 : 1) * (0.5 + 0.3 * rng.uniform());
          }
        }
    batches.clear();
    bool ok = true;
    for (int attribute = 0; attribute < mc.n_attributes && ok; ++attribute) {
      batches.push_back(make_batch(rng, o.batch, o.image_size, mc.n_attributes, attribute, 1));
      batches.push_back(make_batch(rng, o.batch, o.image_size, mc.n_attributes, attribute, 0));
      const Margins m = point_margins(model, batches[batches.size() - 2], batches.back(), attribute);
      ok = m.kink >= o.kink_margin;
    }
    if (ok) break;
  }
  for (auto& [name, params] : model.networks()) {
    result.parameter_count += params->scalar_count();
    result.max_network_parameters = std::max(result.max_network_parameters, params->scalar_count());
  }

  for (int attribute = 0; attribute < mc.n_attributes; ++attribute) {
    const Batch& a = batches[static_cast<std::size_t>(2 * attribute)];
    const Batch& b = batches[static_cast<std::size_t>(2 * attribute + 1)];

    for (auto& [name, params] : model.networks()) params->zero_grad();
    {
      const GeneratorForward fwd = generator_forward(model, a, b, attribute);
      discriminator_pass(model, fwd, a, b, tc, true);
      generator_pass(model, fwd, a, b, tc, true);
    }

    for (auto& [net, params] : model.networks()) {
      const bool is_disc = net.rfind("discriminator", 0) == 0;
      for (auto& p : *params) {
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
          const double saved = p.value[j];
          auto objective = [&](double v) {
            p.value[j] = v;
            const LossReport r = evaluate_losses(model, a, b, attribute, tc);
            return is_disc ? r.d_total : r.g_total;
          };
          const double plus = objective(saved + o.h), minus = objective(saved - o.h);
          p.value[j] = saved;
          const double numeric = (plus - minus) / (2 * o.h);
          const double analytic = p.grad[j];
          const double err = rel_error(analytic, numeric, o.floor);
          result.checked += 1;
          result.worst_rel_error = std::max(result.worst_rel_error, err);
          if (err <= o.tolerance)
            result.within += 1;
          else
            result.failures.push_back({"attr" + std::to_string(attribute) + ":" + net + "/" + p.name + "[" +
                                           std::to_string(j) + "]",
                                       analytic, numeric, err});
        }
      }
    }
  }
  return result;
}

}  // namespace elegant::testing
