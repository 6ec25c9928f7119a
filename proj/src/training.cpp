#include "elegant/training.hpp"

#include <cmath>
#include <tuple>

#include <nlohmann/json.hpp>

#include "elegant/error.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

// Labels of a concatenated [A; B; C; D] batch.
std::vector<AttributeLabelVector> join_labels(std::initializer_list<const std::vector<AttributeLabelVector>*> parts) {
  std::vector<AttributeLabelVector> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

std::vector<double> scores_of(const Tensor& logits, std::size_t begin, std::size_t count) {
  std::vector<double> s(count);
  for (std::size_t k = 0; k < count; ++k) s[k] = sigmoid(logits[begin + k]);
  return s;
}

// d/dlogit of -log(max(s, eps)) with s = sigmoid(logit).
double grad_neg_log(double s, double eps) { return s >= eps ? -(1.0 - s) : 0.0; }
// d/dlogit of -log(max(1 - s, eps)).
double grad_neg_log_complement(double s, double eps) { return 1.0 - s >= eps ? s : 0.0; }

ScaleScores real_fake_scores(const Tensor& logits, std::size_t na, std::size_t nb) {
  ScaleScores s;
  s.a = scores_of(logits, 0, na);
  s.b = scores_of(logits, na, nb);
  s.c = scores_of(logits, na + nb, na);
  s.d = scores_of(logits, 2 * na + nb, nb);
  return s;
}

Tensor real_fake_images(const Batch& a, const Batch& b, const GeneratorForward& fwd) {
  const Tensor* parts[] = {&a.images, &b.images, &fwd.c, &fwd.d};
  return concat_batch(parts);
}

Tensor fake_images(const GeneratorForward& fwd) {
  const Tensor* parts[] = {&fwd.c, &fwd.d};
  return concat_batch(parts);
}

void check_finite(const char* term, double v) {
  if (!std::isfinite(v)) throw DivergenceError(term, v);
}

// Non-finite logits would otherwise surface as a score contract violation.
void check_finite(const char* term, const Tensor& logits) {
  for (std::size_t k = 0; k < logits.numel(); ++k) check_finite(term, static_cast<double>(logits[k]));
}

// Gradient of clamp(image + residual, -1, 1) with respect to the residual.
Tensor compose_backward(const Tensor& image, const Tensor& residual, const Tensor& d_out) {
  Tensor d(residual.shape());
  for (std::size_t k = 0; k < d.numel(); ++k) {
    const real v = image[k] + residual[k];
    d[k] = (v >= real(-1) && v <= real(1)) ? d_out[k] : real(0);
  }
  return d;
}

Tensor l1_backward(const Tensor& x, const Tensor& target, double scale) {
  Tensor d(x.shape());
  for (std::size_t k = 0; k < d.numel(); ++k) {
    const real diff = x[k] - target[k];
    d[k] = diff > 0 ? static_cast<real>(scale) : (diff < 0 ? static_cast<real>(-scale) : real(0));
  }
  return d;
}

Tensor sum_of(std::initializer_list<const Tensor*> terms) {
  Tensor out;
  for (const Tensor* t : terms) {
    if (!t || t->empty()) continue;
    if (out.empty())
      out = *t;
    else
      out += *t;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train config field '" + field + "': " + why);
  };
  if (!(learning_rate > 0)) fail("learning_rate", "must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must be in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must be in [0, 1)");
  if (!(adam_epsilon > 0)) fail("adam_epsilon", "must be > 0");
  if (batch_size <= 0) fail("batch_size", "must be positive");
  if (total_steps <= 0) fail("total_steps", "must be positive");
  if (!(recon_weight >= 0)) fail("recon_weight", "must be >= 0");
  if (!(adv_weight >= 0)) fail("adv_weight", "must be >= 0");
  if (!(log_clamp_eps > 0 && log_clamp_eps < 1)) fail("log_clamp_eps", "must be in (0, 1)");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
}

std::string to_json_line(const LossReport& r) {
  nlohmann::json j = {{"step", r.step},
                      {"attribute_index", r.attribute_index},
                      {"d1_loss", r.d1_loss},
                      {"d2_loss", r.d2_loss},
                      {"d_total", r.d_total},
                      {"reconstruction", r.reconstruction},
                      {"g_adversarial", r.g_adversarial},
                      {"g_total", r.g_total}};
  return j.dump();
}

LossReport loss_report_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  LossReport r;
  r.step = j.at("step").get<std::int64_t>();
  r.attribute_index = j.at("attribute_index").get<int>();
  r.d1_loss = j.at("d1_loss").get<double>();
  r.d2_loss = j.at("d2_loss").get<double>();
  r.d_total = j.at("d_total").get<double>();
  r.reconstruction = j.at("reconstruction").get<double>();
  r.g_adversarial = j.at("g_adversarial").get<double>();
  r.g_total = j.at("g_total").get<double>();
  return r;
}

AdamMoments AdamMoments::zeros_like(const ParameterSet& params) {
  AdamMoments m;
  for (const auto& p : params) {
    m.m.emplace_back(p.value.shape());
    m.v.emplace_back(p.value.shape());
  }
  return m;
}

void adam_update(ParameterSet& params, AdamMoments& moments, const TrainConfig& config) {
  if (moments.m.size() != params.size() || moments.v.size() != params.size())
    throw ContractError("adam_update: moment accumulators do not match parameters");
  moments.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(moments.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(moments.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    Tensor& m = moments.m[k];
    Tensor& v = moments.v[k];
    if (!m.same_shape(p.value) || !v.same_shape(p.value))
      throw ContractError("adam_update: moment shape mismatch for " + p.name);
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const double g = p.grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<real>(mj);
      v[j] = static_cast<real>(vj);
      const double step = config.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + config.adam_epsilon);
      p.value[j] = static_cast<real>(p.value[j] - step);
    }
  }
}

TrainState TrainState::fresh(const ModelConfig& model_config, const TrainConfig& config) {
  TrainState s;
  s.model = Model::create(model_config, config.seed);
  s.encoder_opt = AdamMoments::zeros_like(s.model.encoder.params());
  s.decoder_opt = AdamMoments::zeros_like(s.model.decoder.params());
  s.d1_opt = AdamMoments::zeros_like(s.model.d1.params());
  s.d2_opt = AdamMoments::zeros_like(s.model.d2.params());
  s.attribute_steps.assign(static_cast<std::size_t>(model_config.n_attributes), 0);
  return s;
}

GeneratorForward generator_forward(const Model& model, const Batch& batch_a, const Batch& batch_b, int attribute) {
  const int n = model.config.n_attributes;
  if (attribute < 0 || attribute >= n)
    throw IndexError("attribute index " + std::to_string(attribute) + " out of range [0, " + std::to_string(n) + ")");
  if (batch_a.size() == 0 || batch_b.size() == 0) throw ContractError("train step: empty batch");
  if (static_cast<int>(batch_a.labels.size()) != batch_a.size() ||
      static_cast<int>(batch_b.labels.size()) != batch_b.size())
    throw ContractError("train step: one label per image required");
  const auto ai = static_cast<std::size_t>(attribute);
  for (const auto& y : batch_a.labels)
    if (y.size() != static_cast<std::size_t>(n) || y.bits[ai] != 1)
      throw ContractError("train step: every label in batch A must have bit " + std::to_string(attribute) + " = 1");
  for (const auto& y : batch_b.labels)
    if (y.size() != static_cast<std::size_t>(n) || y.bits[ai] != 0)
      throw ContractError("train step: every label in batch B must have bit " + std::to_string(attribute) + " = 0");

  GeneratorForward f;
  f.attribute = attribute;
  f.za = model.encoder.forward(batch_a.images, &f.enc_a);
  f.zb = model.encoder.forward(batch_b.images, &f.enc_b);
  std::tie(f.zc, f.zd) = exchange(f.za, f.zb, attribute);
  f.ra = model.decoder.forward(f.za, f.za, &f.dec_aa);
  f.rc = model.decoder.forward(f.zc, f.za, &f.dec_ca);
  f.rb = model.decoder.forward(f.zb, f.zb, &f.dec_bb);
  f.rd = model.decoder.forward(f.zd, f.zb, &f.dec_db);
  f.a_rec = compose(batch_a.images, f.ra);
  f.c = compose(batch_a.images, f.rc);
  f.b_rec = compose(batch_b.images, f.rb);
  f.d = compose(batch_b.images, f.rd);
  f.ya = batch_a.labels;
  f.yb = batch_b.labels;
  for (const auto& y : f.ya) f.yc.push_back(flip_label(y, attribute, 0));
  for (const auto& y : f.yb) f.yd.push_back(flip_label(y, attribute, 1));
  return f;
}

DiscriminatorLoss discriminator_pass(Model& model, const GeneratorForward& fwd, const Batch& batch_a,
                                     const Batch& batch_b, const TrainConfig& config, bool accumulate) {
  const auto na = static_cast<std::size_t>(batch_a.size()), nb = static_cast<std::size_t>(batch_b.size());
  const Tensor images = real_fake_images(batch_a, batch_b, fwd);
  const auto labels = join_labels({&fwd.ya, &fwd.yb, &fwd.yc, &fwd.yd});
  const double eps = config.log_clamp_eps;

  ScaleScores scores[2];
  Discriminator* nets[] = {&model.d1, &model.d2};
  for (int k = 0; k < 2; ++k) {
    Discriminator::Pass pass;
    const Tensor logits = nets[k]->forward(images, labels, accumulate ? &pass : nullptr);
    check_finite(k == 0 ? "d1_loss" : "d2_loss", logits);
    scores[k] = real_fake_scores(logits, na, nb);
    if (!accumulate) continue;
    Tensor d_logits({static_cast<int>(2 * (na + nb))});
    const ScaleScores& s = scores[k];
    for (std::size_t j = 0; j < na; ++j) {
      d_logits[j] = static_cast<real>(grad_neg_log(s.a[j], eps) / static_cast<double>(na));
      d_logits[na + nb + j] = static_cast<real>(grad_neg_log_complement(s.c[j], eps) / static_cast<double>(na));
    }
    for (std::size_t j = 0; j < nb; ++j) {
      d_logits[na + j] = static_cast<real>(grad_neg_log(s.b[j], eps) / static_cast<double>(nb));
      d_logits[2 * na + nb + j] = static_cast<real>(grad_neg_log_complement(s.d[j], eps) / static_cast<double>(nb));
    }
    nets[k]->backward(pass, d_logits, false);
  }
  return discriminator_loss(scores[0], scores[1], eps);
}

GeneratorLoss generator_pass(Model& model, const GeneratorForward& fwd, const Batch& batch_a, const Batch& batch_b,
                             const TrainConfig& config, bool accumulate) {
  const auto na = static_cast<std::size_t>(batch_a.size()), nb = static_cast<std::size_t>(batch_b.size());
  const double eps = config.log_clamp_eps;
  const Tensor fakes = fake_images(fwd);
  const auto labels = join_labels({&fwd.yc, &fwd.yd});

  std::vector<double> c_scores[2], d_scores[2];
  Tensor d_fakes;
  Discriminator* nets[] = {&model.d1, &model.d2};
  for (int k = 0; k < 2; ++k) {
    Discriminator::Pass pass;
    const Tensor logits = nets[k]->forward(fakes, labels, accumulate ? &pass : nullptr);
    check_finite("g_adversarial", logits);
    c_scores[k] = scores_of(logits, 0, na);
    d_scores[k] = scores_of(logits, na, nb);
    if (!accumulate) continue;
    Tensor d_logits({static_cast<int>(na + nb)});
    for (std::size_t j = 0; j < na; ++j)
      d_logits[j] = static_cast<real>(config.adv_weight * grad_neg_log(c_scores[k][j], eps) / static_cast<double>(na));
    for (std::size_t j = 0; j < nb; ++j)
      d_logits[na + j] =
          static_cast<real>(config.adv_weight * grad_neg_log(d_scores[k][j], eps) / static_cast<double>(nb));
    Tensor d_img = nets[k]->backward(pass, d_logits, true, false);
    if (d_fakes.empty())
      d_fakes = std::move(d_img);
    else
      d_fakes += d_img;
  }

  GeneratorLoss out;
  out.adversarial = generator_adversarial_loss(c_scores[0], d_scores[0], c_scores[1], d_scores[1], eps);
  out.reconstruction = reconstruction_loss(batch_a.images, fwd.a_rec, batch_b.images, fwd.b_rec);
  out.total = generator_loss(out.reconstruction, out.adversarial, config);
  if (!accumulate) return out;

  const std::size_t per_a = batch_a.images.numel() / na;
  Shape sc = batch_a.images.shape(), sd = batch_b.images.shape();
  Tensor d_c(sc, std::vector<real>(d_fakes.values().begin(),
                                   d_fakes.values().begin() + static_cast<std::ptrdiff_t>(per_a * na)));
  Tensor d_d(sd, std::vector<real>(d_fakes.values().begin() + static_cast<std::ptrdiff_t>(per_a * na),
                                   d_fakes.values().end()));

  const Tensor d_a_rec =
      l1_backward(fwd.a_rec, batch_a.images, config.recon_weight / static_cast<double>(batch_a.images.numel()));
  const Tensor d_b_rec =
      l1_backward(fwd.b_rec, batch_b.images, config.recon_weight / static_cast<double>(batch_b.images.numel()));

  Decoder& dec = model.decoder;
  const auto g_aa = dec.backward(fwd.dec_aa, compose_backward(batch_a.images, fwd.ra, d_a_rec));
  const auto g_ca = dec.backward(fwd.dec_ca, compose_backward(batch_a.images, fwd.rc, d_c));
  const auto g_bb = dec.backward(fwd.dec_bb, compose_backward(batch_b.images, fwd.rb, d_b_rec));
  const auto g_db = dec.backward(fwd.dec_db, compose_backward(batch_b.images, fwd.rd, d_d));

  // zC = zA with part i from zB, zD = zB with part i from zA.
  const int n = model.config.n_attributes, i = fwd.attribute;
  std::vector<Tensor> dza, dzb;
  for (int p = 0; p < n; ++p) {
    const auto pu = static_cast<std::size_t>(p);
    const Tensor* from_c = p == i ? nullptr : &g_ca.d_new_parts[pu];
    const Tensor* from_d = p == i ? &g_db.d_new_parts[pu] : nullptr;
    dza.push_back(sum_of({&g_aa.d_new_parts[pu], &g_aa.d_ref_parts[pu], &g_ca.d_ref_parts[pu], from_c, from_d}));
    const Tensor* to_d = p == i ? nullptr : &g_db.d_new_parts[pu];
    const Tensor* to_c = p == i ? &g_ca.d_new_parts[pu] : nullptr;
    dzb.push_back(sum_of({&g_bb.d_new_parts[pu], &g_bb.d_ref_parts[pu], &g_db.d_ref_parts[pu], to_d, to_c}));
  }
  std::vector<Tensor> dsa, dsb;
  for (std::size_t s = 0; s < g_aa.d_shortcuts.size(); ++s) {
    dsa.push_back(sum_of({&g_aa.d_shortcuts[s], &g_ca.d_shortcuts[s]}));
    dsb.push_back(sum_of({&g_bb.d_shortcuts[s], &g_db.d_shortcuts[s]}));
  }
  model.encoder.backward(fwd.enc_a, dza, dsa);
  model.encoder.backward(fwd.enc_b, dzb, dsb);
  return out;
}

LossReport evaluate_losses(const Model& model, const Batch& batch_a, const Batch& batch_b, int attribute,
                           const TrainConfig& config) {
  // Passes without accumulation only read the model.
  Model& m = const_cast<Model&>(model);
  const GeneratorForward fwd = generator_forward(model, batch_a, batch_b, attribute);
  const DiscriminatorLoss dl = discriminator_pass(m, fwd, batch_a, batch_b, config, false);
  const GeneratorLoss gl = generator_pass(m, fwd, batch_a, batch_b, config, false);
  LossReport r;
  r.attribute_index = attribute;
  r.d1_loss = dl.d1;
  r.d2_loss = dl.d2;
  r.d_total = dl.total;
  r.reconstruction = gl.reconstruction;
  r.g_adversarial = gl.adversarial;
  r.g_total = gl.total;
  return r;
}

LossReport train_step(const Batch& batch_a, const Batch& batch_b, int attribute, TrainState& state,
                      const TrainConfig& config) {
  Model& model = state.model;
  const GeneratorForward fwd = generator_forward(model, batch_a, batch_b, attribute);

  model.d1.params().zero_grad();
  model.d2.params().zero_grad();
  const DiscriminatorLoss dl = discriminator_pass(model, fwd, batch_a, batch_b, config, true);
  check_finite("d1_loss", dl.d1);
  check_finite("d2_loss", dl.d2);
  adam_update(model.d1.params(), state.d1_opt, config);
  adam_update(model.d2.params(), state.d2_opt, config);

  model.encoder.params().zero_grad();
  model.decoder.params().zero_grad();
  const GeneratorLoss gl = generator_pass(model, fwd, batch_a, batch_b, config, true);
  check_finite("reconstruction", gl.reconstruction);
  check_finite("g_adversarial", gl.adversarial);
  adam_update(model.encoder.params(), state.encoder_opt, config);
  adam_update(model.decoder.params(), state.decoder_opt, config);

  state.step += 1;
  state.attribute_steps.at(static_cast<std::size_t>(attribute)) += 1;
  LossReport r;
  r.step = state.step;  // steps completed, 1-based
  r.attribute_index = attribute;
  r.d1_loss = dl.d1;
  r.d2_loss = dl.d2;
  r.d_total = dl.total;
  r.reconstruction = gl.reconstruction;
  r.g_adversarial = gl.adversarial;
  r.g_total = gl.total;
  return r;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
