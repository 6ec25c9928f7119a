#include "elegant/model.hpp"

#include <cmath>

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

constexpr ConvGeometry kGeometry{4, 2, 1};

Tensor block_forward(const ConvBlock& b, const ParameterSet& p, Tensor input, real slope, BlockCache* cache) {
  Tensor conv = b.op == ConvBlock::Op::Conv
                    ? kernels::conv2d(input, p[b.weight].value, p[b.bias].value, kGeometry)
                    : kernels::conv_transpose2d(input, p[b.weight].value, p[b.bias].value, kGeometry);
  Tensor pre = b.norm ? kernels::l2_normalize(conv, p[b.alpha].value, p[b.beta].value, kNormEpsilon) : conv;
  Tensor out = b.activation == ConvBlock::Activation::LeakyRelu ? kernels::leaky_relu(pre, slope)
                                                                : kernels::scaled_tanh(pre);
  if (cache) {
    cache->input = std::move(input);
    cache->conv_out = std::move(conv);
    cache->pre_activation = std::move(pre);
    cache->output = out;
  }
  return out;
}

// Returns the gradient with respect to the block input (empty unless wanted).
Tensor block_backward(const ConvBlock& b, ParameterSet& p, const BlockCache& cache, const Tensor& d_out, real slope,
                      bool want_input) {
  Tensor d_pre = b.activation == ConvBlock::Activation::LeakyRelu
                     ? kernels::leaky_relu_backward(cache.pre_activation, d_out, slope)
                     : kernels::scaled_tanh_backward(cache.output, d_out);
  Tensor d_conv;
  if (b.norm) {
    kernels::l2_normalize_backward(cache.conv_out, p[b.alpha].value, d_pre, kNormEpsilon, d_conv, p[b.alpha].grad,
                                   p[b.beta].grad);
  } else {
    d_conv = std::move(d_pre);
  }
  Tensor d_in;
  if (b.op == ConvBlock::Op::Conv)
    kernels::conv2d_backward(cache.input, p[b.weight].value, d_conv, kGeometry, want_input ? &d_in : nullptr,
                             p[b.weight].grad, p[b.bias].grad);
  else
    kernels::conv_transpose2d_backward(cache.input, p[b.weight].value, d_conv, kGeometry,
                                       want_input ? &d_in : nullptr, p[b.weight].grad, p[b.bias].grad);
  return d_in;
}

ConvBlock add_block(ParameterSet& p, const std::string& prefix, ConvBlock::Op op, int in, int out, bool norm,
                    ConvBlock::Activation act) {
  ConvBlock b;
  b.op = op;
  b.activation = act;
  b.norm = norm;
  const Shape w = op == ConvBlock::Op::Conv ? Shape{out, in, 4, 4} : Shape{in, out, 4, 4};
  b.weight = p.add(prefix + ".weight", w);
  b.bias = p.add(prefix + ".bias", {out});
  if (norm) {
    b.alpha = p.add(prefix + ".norm.alpha", {out});
    b.beta = p.add(prefix + ".norm.beta", {out});
  }
  return b;
}

void init_block(const ConvBlock& b, ParameterSet& p, Rng& rng, double slope, bool zero) {
  Tensor& w = p[b.weight].value;
  if (zero) {
    w.fill(0);
  } else {
    // He initialisation for leaky units. A stride-2, kernel-4 deconv output
    // receives in_channels * 4 contributions.
    const double fan_in = b.op == ConvBlock::Op::Conv ? double(w.dim(1)) * w.dim(2) * w.dim(3) : double(w.dim(0)) * 4;
    const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    for (auto& v : w.values()) v = static_cast<real>(rng.normal() * stddev);
  }
  p[b.bias].value.fill(0);
  if (b.norm) {
    p[b.alpha].value.fill(1);
    p[b.beta].value.fill(0);
  }
}

void check_images(const Tensor& images, const ModelConfig& config, const char* what) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config.image_size ||
      images.dim(3) != config.image_size)
    throw ShapeError(std::string(what) + ": expected images [N,3," + std::to_string(config.image_size) + "," +
                      std::to_string(config.image_size) + "], got " + shape_string(images.shape()));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model config field '" + field + "': " + why);
  };
  if (n_attributes <= 0) fail("n_attributes", "must be positive");
  if (depth <= 0 || depth > 12) fail("depth", "must be in [1, 12]");
  if (image_size <= 0) fail("image_size", "must be positive");
  if (image_size % (1 << depth) != 0) fail("image_size", "must be divisible by 2^depth");
  // The half-scale discriminator applies `depth` halvings to image_size / 2.
  if (image_size % (1 << (depth + 1)) != 0) fail("image_size", "must be divisible by 2^(depth+1)");
  if (base_channels <= 0) fail("base_channels", "must be positive");
  if (latent_channels <= 0) fail("latent_channels", "must be positive");
  if (latent_channels % n_attributes != 0) fail("latent_channels", "must be divisible by n_attributes");
  if (!(leaky_slope >= 0 && leaky_slope < 1)) fail("leaky_slope", "must be in [0, 1)");
}

int ModelConfig::encoder_width(int k) const {
  if (k == depth - 1) return latent_channels;
  return base_channels << k;
}

int ModelConfig::discriminator_width(int k) const { return base_channels << k; }

AttributeLabelVector flip_label(const AttributeLabelVector& y, int i, std::uint8_t value) {
  if (i < 0 || i >= static_cast<int>(y.size()))
    throw IndexError("attribute index " + std::to_string(i) + " out of range [0, " + std::to_string(y.size()) + ")");
  if (value > 1) throw ContractError("label value must be 0 or 1");
  AttributeLabelVector out = y;
  out.bits[static_cast<std::size_t>(i)] = value;
  return out;
}

std::pair<LatentCode, LatentCode> exchange(const LatentCode& za, const LatentCode& zb, int i) {
  const int n = za.n_attributes();
  if (zb.n_attributes() != n) throw ShapeError("exchange: codes have different part counts");
  if (i < 0 || i >= n)
    throw IndexError("exchange: attribute index " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
  for (int k = 0; k < n; ++k) {
    if (!za.parts[k].same_shape(za.parts[0]) || !zb.parts[k].same_shape(za.parts[0]))
      throw ShapeError("exchange: latent parts are not shape-compatible");
  }
  LatentCode zc = za, zd = zb;
  zc.parts[static_cast<std::size_t>(i)] = zb.parts[static_cast<std::size_t>(i)];
  zd.parts[static_cast<std::size_t>(i)] = za.parts[static_cast<std::size_t>(i)];
  return {std::move(zc), std::move(zd)};
}

Tensor compose(const Tensor& image, const Tensor& residual) {
  require_same_shape(image, residual, "compose");
  Tensor out(image.shape());
  for (std::size_t k = 0; k < image.numel(); ++k) out[k] = std::clamp(image[k] + residual[k], real(-1), real(1));
  return out;
}

Tensor l2_normalize(const Tensor& x, const NormParams& params) {
  if (x.empty()) throw ShapeError("l2_normalize: empty input");
  return kernels::l2_normalize(x, params.alpha, params.beta, kNormEpsilon);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const ModelConfig& config) : config_(config) {
  config_.validate();
  for (int k = 0; k < config_.depth; ++k) {
    const int in = k == 0 ? 3 : config_.encoder_width(k - 1);
    blocks_.push_back(add_block(params_, "conv" + std::to_string(k), ConvBlock::Op::Conv, in,
                                config_.encoder_width(k), true, ConvBlock::Activation::LeakyRelu));
  }
}

void Encoder::initialize(Rng& rng) {
  for (const auto& b : blocks_) init_block(b, params_, rng, config_.leaky_slope, false);
}

LatentCode Encoder::forward(const Tensor& images, Pass* cache) const {
  check_images(images, config_, "encode");
  if (cache) cache->blocks.assign(blocks_.size(), {});
  const real slope = static_cast<real>(config_.leaky_slope);
  LatentCode code;
  Tensor x = images;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    x = block_forward(blocks_[k], params_, std::move(x), slope, cache ? &cache->blocks[k] : nullptr);
    if (k + 1 < blocks_.size()) code.shortcuts.push_back(std::make_shared<const Tensor>(x));
  }
  const std::vector<int> widths(static_cast<std::size_t>(config_.n_attributes), config_.part_channels());
  code.parts = split_channels(x, widths);
  return code;
}

void Encoder::backward(const Pass& cache, std::span<const Tensor> d_parts, std::span<const Tensor> d_shortcuts) {
  if (static_cast<int>(d_parts.size()) != config_.n_attributes)
    throw ContractError("encoder backward: expected one gradient per latent part");
  if (d_shortcuts.size() + 1 != blocks_.size())
    throw ContractError("encoder backward: expected one gradient per shortcut");
  const Tensor& latent = cache.blocks.back().output;
  std::vector<const Tensor*> ptrs;
  std::vector<Tensor> zeros;
  zeros.reserve(d_parts.size());
  for (const auto& d : d_parts) {
    if (d.empty()) {
      Shape s = latent.shape();
      s[1] = config_.part_channels();
      zeros.emplace_back(s);
      ptrs.push_back(&zeros.back());
    } else {
      ptrs.push_back(&d);
    }
  }
  Tensor d_out = concat_channels(ptrs);
  const real slope = static_cast<real>(config_.leaky_slope);
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    Tensor d_in = block_backward(blocks_[k], params_, cache.blocks[k], d_out, slope, k > 0);
    if (k == 0) break;
    if (!d_shortcuts[k - 1].empty()) d_in += d_shortcuts[k - 1];
    d_out = std::move(d_in);
  }
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const ModelConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.depth;
  int prev = 0;
  for (int k = 0; k < d; ++k) {
    const bool last = k == d - 1;
    const int out = last ? 3 : config_.encoder_width(d - 2 - k);
    const int in = k == 0 ? 2 * config_.latent_channels : prev + config_.encoder_width(d - 1 - k);
    blocks_.push_back(add_block(params_, "deconv" + std::to_string(k), ConvBlock::Op::Deconv, in, out, !last,
                                last ? ConvBlock::Activation::ScaledTanh : ConvBlock::Activation::LeakyRelu));
    prev = out;
  }
}

void Decoder::initialize(Rng& rng, InitOptions options) {
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    init_block(blocks_[k], params_, rng, config_.leaky_slope, options.zero_final_layers && k + 1 == blocks_.size());
}

Tensor Decoder::forward(const LatentCode& z_new, const LatentCode& z_ref, Pass* cache) const {
  const int d = config_.depth;
  if (z_new.n_attributes() != config_.n_attributes || z_ref.n_attributes() != config_.n_attributes)
    throw ShapeError("decode: latent codes must have " + std::to_string(config_.n_attributes) + " parts");
  if (static_cast<int>(z_ref.shortcuts.size()) != d - 1)
    throw ContractError("decode: reference code carries " + std::to_string(z_ref.shortcuts.size()) +
                        " shortcuts, expected " + std::to_string(d - 1));
  for (const auto& s : z_ref.shortcuts)
    if (!s) throw ContractError("decode: missing shortcut activation");
  std::vector<const Tensor*> parts;
  for (const auto& p : z_new.parts) parts.push_back(&p);
  for (const auto& p : z_ref.parts) parts.push_back(&p);
  Tensor x = concat_channels(parts);
  if (cache) cache->blocks.assign(blocks_.size(), {});
  const real slope = static_cast<real>(config_.leaky_slope);
  for (int k = 0; k < d; ++k) {
    if (k > 0) {
      const Tensor* pair[] = {&x, z_ref.shortcuts[static_cast<std::size_t>(d - 1 - k)].get()};
      x = concat_channels(pair);
    }
    x = block_forward(blocks_[static_cast<std::size_t>(k)], params_, std::move(x), slope,
                      cache ? &cache->blocks[static_cast<std::size_t>(k)] : nullptr);
  }
  return x;
}

Decoder::Gradients Decoder::backward(const Pass& cache, const Tensor& d_residual) {
  const int d = config_.depth;
  const real slope = static_cast<real>(config_.leaky_slope);
  Gradients g;
  g.d_shortcuts.resize(static_cast<std::size_t>(d - 1));
  Tensor d_out = d_residual;
  for (int k = d - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    Tensor d_in = block_backward(blocks_[ku], params_, cache.blocks[ku], d_out, slope, true);
    if (k > 0) {
      const int skip = config_.encoder_width(d - 1 - k);
      const int widths[] = {d_in.dim(1) - skip, skip};
      auto split = split_channels(d_in, widths);
      g.d_shortcuts[static_cast<std::size_t>(d - 1 - k)] = std::move(split[1]);
      d_out = std::move(split[0]);
    } else {
      const std::vector<int> widths(static_cast<std::size_t>(2 * config_.n_attributes), config_.part_channels());
      auto split = split_channels(d_in, widths);
      for (int a = 0; a < config_.n_attributes; ++a) {
        g.d_new_parts.push_back(std::move(split[static_cast<std::size_t>(a)]));
      }
      for (int a = 0; a < config_.n_attributes; ++a) {
        g.d_ref_parts.push_back(std::move(split[static_cast<std::size_t>(config_.n_attributes + a)]));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- Discriminator

Discriminator::Discriminator(const ModelConfig& config, int scale) : config_(config), scale_(scale) {
  config_.validate();
  if (scale != 1 && scale != 2) throw ConfigError("discriminator scale must be 1 or 2");
  for (int k = 0; k < config_.depth; ++k) {
    const int in = k == 0 ? 3 + config_.n_attributes : config_.discriminator_width(k - 1);
    blocks_.push_back(add_block(params_, "conv" + std::to_string(k), ConvBlock::Op::Conv, in,
                                config_.discriminator_width(k), true, ConvBlock::Activation::LeakyRelu));
  }
  const int side = config_.image_size / scale / (1 << config_.depth);
  const int features = config_.discriminator_width(config_.depth - 1) * side * side;
  fc_weight_ = params_.add("fc.weight", {1, features});
  fc_bias_ = params_.add("fc.bias", {1});
}

void Discriminator::initialize(Rng& rng, InitOptions options) {
  for (const auto& b : blocks_) init_block(b, params_, rng, config_.leaky_slope, false);
  Tensor& w = params_[fc_weight_].value;
  if (options.zero_final_layers) {
    w.fill(0);
  } else {
    const double stddev = std::sqrt(1.0 / static_cast<double>(w.numel()));
    for (auto& v : w.values()) v = static_cast<real>(rng.normal() * stddev);
  }
  params_[fc_bias_].value.fill(0);
}

Tensor Discriminator::forward(const Tensor& images, std::span<const AttributeLabelVector> labels, Pass* cache) const {
  check_images(images, config_, "discriminate");
  const int n = images.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw ContractError("discriminate: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                        " images");
  Tensor x = scale_ == 2 ? kernels::avg_pool2(images) : images;
  const int h = x.dim(2), w = x.dim(3), na = config_.n_attributes;
  Tensor maps({n, na, h, w});
  for (int s = 0; s < n; ++s) {
    if (static_cast<int>(labels[static_cast<std::size_t>(s)].size()) != na)
      throw ContractError("discriminate: label length " + std::to_string(labels[static_cast<std::size_t>(s)].size()) +
                          " does not match n_attributes " + std::to_string(na));
    for (int a = 0; a < na; ++a) {
      const std::uint8_t bit = labels[static_cast<std::size_t>(s)].bits[static_cast<std::size_t>(a)];
      if (bit > 1) throw ContractError("discriminate: label entries must be 0 or 1");
      real* plane = maps.data() + (static_cast<std::size_t>(s) * na + a) * h * w;
      std::fill(plane, plane + static_cast<std::size_t>(h) * w, static_cast<real>(bit));
    }
  }
  const Tensor* pair[] = {&x, &maps};
  x = concat_channels(pair);
  if (cache) cache->blocks.assign(blocks_.size(), {});
  const real slope = static_cast<real>(config_.leaky_slope);
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    x = block_forward(blocks_[k], params_, std::move(x), slope, cache ? &cache->blocks[k] : nullptr);

  const Tensor& fw = params_[fc_weight_].value;
  const std::size_t features = fw.numel();
  Tensor logits({n});
  for (int s = 0; s < n; ++s) {
    double acc = params_[fc_bias_].value[0];
    const real* f = x.data() + features * static_cast<std::size_t>(s);
    for (std::size_t j = 0; j < features; ++j) acc += static_cast<double>(fw[j]) * f[j];
    logits[static_cast<std::size_t>(s)] = static_cast<real>(acc);
  }
  if (cache) cache->logits = logits;
  return logits;
}

Tensor Discriminator::backward(const Pass& cache, const Tensor& d_logits, bool want_input_grad,
                               bool accumulate_params) {
  if (!accumulate_params) {
    std::vector<Tensor> saved;
    saved.reserve(params_.size());
    for (const auto& p : params_) saved.push_back(p.grad);
    Tensor d = backward(cache, d_logits, want_input_grad, true);
    for (std::size_t k = 0; k < params_.size(); ++k) params_[k].grad = std::move(saved[k]);
    return d;
  }
  const Tensor& features = cache.blocks.back().output;
  const int n = features.dim(0);
  Tensor& fw = params_[fc_weight_].value;
  Tensor& gw = params_[fc_weight_].grad;
  const std::size_t nf = fw.numel();
  Tensor d_feat(features.shape());
  double gb = 0;
  for (std::size_t j = 0; j < nf; ++j) {
    double acc = 0;
    for (int s = 0; s < n; ++s) acc += static_cast<double>(d_logits[static_cast<std::size_t>(s)]) *
                                       features[nf * static_cast<std::size_t>(s) + j];
    gw[j] += static_cast<real>(acc);
  }
  for (int s = 0; s < n; ++s) {
    const real g = d_logits[static_cast<std::size_t>(s)];
    gb += g;
    for (std::size_t j = 0; j < nf; ++j) d_feat[nf * static_cast<std::size_t>(s) + j] = g * fw[j];
  }
  params_[fc_bias_].grad[0] += static_cast<real>(gb);

  const real slope = static_cast<real>(config_.leaky_slope);
  Tensor d = std::move(d_feat);
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const bool need = k > 0 || want_input_grad;
    d = block_backward(blocks_[k], params_, cache.blocks[k], d, slope, need);
    if (!need) return {};
  }
  const int widths[] = {3, config_.n_attributes};
  Tensor d_img = std::move(split_channels(d, widths)[0]);
  return scale_ == 2 ? kernels::avg_pool2_backward(d_img) : d_img;
}

// ---------------------------------------------------------------- Model

Model Model::create(const ModelConfig& config, std::uint64_t seed, InitOptions options) {
  config.validate();
  Model m{config, Encoder(config), Decoder(config), Discriminator(config, 1), Discriminator(config, 2)};
  Rng rng(seed);
  m.encoder.initialize(rng);
  m.decoder.initialize(rng, options);
  m.d1.initialize(rng, options);
  m.d2.initialize(rng, options);
  return m;
}

std::vector<std::pair<std::string, ParameterSet*>> Model::networks() {
  return {{"encoder", &encoder.params()},
          {"decoder", &decoder.params()},
          {"discriminator_1", &d1.params()},
          {"discriminator_2", &d2.params()}};
}

std::vector<std::pair<std::string, const ParameterSet*>> Model::networks() const {
  return {{"encoder", &encoder.params()},
          {"decoder", &decoder.params()},
          {"discriminator_1", &d1.params()},
          {"discriminator_2", &d2.params()}};
}

LatentCode encode(const Tensor& images, const Model& model) { return model.encoder.forward(images); }

Tensor decode(const LatentCode& z_new, const LatentCode& z_ref, const Model& model) {
  return model.decoder.forward(z_new, z_ref);
}

std::vector<double> discriminate(const Tensor& images, std::span<const AttributeLabelVector> labels, int scale,
                                 const Model& model) {
  if (scale != 1 && scale != 2) throw ContractError("discriminate: scale must be 1 or 2");
  Tensor logits = (scale == 1 ? model.d1 : model.d2).forward(images, labels);
  std::vector<double> scores(logits.numel());
  for (std::size_t k = 0; k < scores.size(); ++k) scores[k] = sigmoid(logits[k]);
  return scores;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
