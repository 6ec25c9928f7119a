#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "elegant/data.hpp"
#include "elegant/losses.hpp"
#include "elegant/model.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

struct TrainConfig {
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 16;
  std::int64_t total_steps = 1000;
  double recon_weight = 1.0;
  double adv_weight = 1.0;
  double log_clamp_eps = 1e-8;
  std::int64_t checkpoint_every = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossReport {
  std::int64_t step = 0;
  int attribute_index = 0;
  double d1_loss = 0;
  double d2_loss = 0;
  double d_total = 0;
  double reconstruction = 0;
  double g_adversarial = 0;
  double g_total = 0;

  bool operator==(const LossReport&) const = default;
};

std::string to_json_line(const LossReport& report);
LossReport loss_report_from_json(const std::string& line);

struct AdamMoments {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static AdamMoments zeros_like(const ParameterSet& params);
};

// One bias-corrected Adam update from the accumulated gradients.
void adam_update(ParameterSet& params, AdamMoments& moments, const TrainConfig& config);

struct TrainState {
  Model model;
  AdamMoments encoder_opt, decoder_opt, d1_opt, d2_opt;
  std::int64_t step = 0;
  std::vector<std::int64_t> attribute_steps;
  SamplerState sampler;

  static TrainState fresh(const ModelConfig& model_config, const TrainConfig& config);
};

// Every intermediate of the generator half of one step.
struct GeneratorForward {
  int attribute = 0;
  Encoder::Pass enc_a, enc_b;
  LatentCode za, zb, zc, zd;
  Decoder::Pass dec_aa, dec_ca, dec_bb, dec_db;
  Tensor ra, rc, rb, rd;          // residuals
  Tensor a_rec, c, b_rec, d;      // composed images
  std::vector<AttributeLabelVector> ya, yb, yc, yd;
};

// Encode, exchange part i, decode four times, compose and flip labels.
// Checks that batch_a has bit i set and batch_b has it cleared.
GeneratorForward generator_forward(const Model& model, const Batch& batch_a, const Batch& batch_b, int attribute);

// Discriminator losses on real A, B and detached C, D. When accumulate is set
// the gradients of d_total are added to d1/d2 parameter grads.
DiscriminatorLoss discriminator_pass(Model& model, const GeneratorForward& fwd, const Batch& batch_a,
                                     const Batch& batch_b, const TrainConfig& config, bool accumulate);

struct GeneratorLoss {
  double reconstruction = 0;
  double adversarial = 0;
  double total = 0;
};

// Generator losses. When accumulate is set the gradients of g_total are added
// to encoder/decoder parameter grads; discriminator grads are left untouched.
GeneratorLoss generator_pass(Model& model, const GeneratorForward& fwd, const Batch& batch_a, const Batch& batch_b,
                             const TrainConfig& config, bool accumulate);

// All losses at the current parameters, no update.
LossReport evaluate_losses(const Model& model, const Batch& batch_a, const Batch& batch_b, int attribute,
                           const TrainConfig& config);

// One discriminator Adam update on d_total followed by one encoder+decoder
// update on g_total. The generator losses are measured against the updated
// discriminators.
LossReport train_step(const Batch& batch_a, const Batch& batch_b, int attribute, TrainState& state,
                      const TrainConfig& config);

struct TrainLoopOptions {
  // Checkpoints are written to <out_dir>/checkpoints/step_<N> and <out_dir>/checkpoints/latest.
  std::filesystem::path out_dir;
  // JSONL loss log, appended to.
  std::filesystem::path loss_log;
  std::function<void(const LossReport&)> on_step;
};

// Round-robin over attributes, one step per iteration, until config.total_steps.
TrainState train_loop(const Dataset& dataset, const TrainConfig& config, const ModelConfig& model_config,
                      std::optional<TrainState> resume, const TrainLoopOptions& options);

}  // namespace ELEGANT_ABI
}  // namespace elegant
