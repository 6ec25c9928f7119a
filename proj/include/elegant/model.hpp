#pragma once

// The exchange model: an encoder whose output is split channel-wise into one
// block per attribute, a residual decoder fed with two concatenated codes plus
// U-Net shortcuts from the image being modified, and two conditional
// discriminators at full and half resolution.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "elegant/kernels.hpp"
#include "elegant/parameters.hpp"
#include "elegant/rng.hpp"
#include "elegant/tensor.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

inline constexpr real kNormEpsilon = real(1e-8);

struct ModelConfig {
  int n_attributes = 2;
  int image_size = 256;
  int depth = 5;
  int base_channels = 64;
  double leaky_slope = 0.2;
  int latent_channels = 512;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Output channels of encoder layer k; the last layer emits latent_channels.
  int encoder_width(int k) const;
  // Output channels of discriminator layer k.
  int discriminator_width(int k) const;
  int part_channels() const { return latent_channels / n_attributes; }
  int latent_size() const { return image_size >> depth; }

  bool operator==(const ModelConfig&) const = default;
};

// One binary entry per attribute.
struct AttributeLabelVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const noexcept { return bits.size(); }
  bool operator==(const AttributeLabelVector&) const = default;
};

// Images [N,3,S,S] with one label per image.
struct Batch {
  Tensor images;
  std::vector<AttributeLabelVector> labels;

  int size() const { return images.empty() ? 0 : images.dim(0); }
};

// Copy of y with bit i set to value.
AttributeLabelVector flip_label(const AttributeLabelVector& y, int i, std::uint8_t value);

struct LatentCode {
  // n blocks, each [N, latent_channels / n, h, w].
  std::vector<Tensor> parts;
  // Encoder activations of every layer except the last, shallow first.
  std::vector<std::shared_ptr<const Tensor>> shortcuts;

  int n_attributes() const noexcept { return static_cast<int>(parts.size()); }
};

// zC takes zA's parts with part i from zB (and zA's shortcuts); zD the converse.
std::pair<LatentCode, LatentCode> exchange(const LatentCode& za, const LatentCode& zb, int i);

// clamp(image + residual, -1, 1), elementwise.
Tensor compose(const Tensor& image, const Tensor& residual);

struct NormParams {
  Tensor alpha;
  Tensor beta;
};

Tensor l2_normalize(const Tensor& x, const NormParams& params);

// Conv/Deconv -> optional l2 norm -> activation.
struct ConvBlock {
  enum class Op { Conv, Deconv };
  enum class Activation { LeakyRelu, ScaledTanh };

  Op op = Op::Conv;
  Activation activation = Activation::LeakyRelu;
  bool norm = true;
  std::size_t weight = 0, bias = 0, alpha = 0, beta = 0;
};

struct BlockCache {
  Tensor input;
  Tensor conv_out;
  Tensor pre_activation;
  Tensor output;
};

struct InitOptions {
  // Zero the final decoder and discriminator layers, making the model the
  // identity map with uninformative discriminators at step 0.
  bool zero_final_layers = true;
};

class Encoder {
 public:
  struct Pass {
    std::vector<BlockCache> blocks;
  };

  Encoder() = default;
  explicit Encoder(const ModelConfig& config);

  void initialize(Rng& rng);
  // images: [N,3,S,S]. The cache is filled when non-null.
  LatentCode forward(const Tensor& images, Pass* cache = nullptr) const;
  // Accumulates parameter gradients. d_parts: gradient per latent part;
  // d_shortcuts: gradient per shortcut (empty tensors count as zero).
  void backward(const Pass& cache, std::span<const Tensor> d_parts, std::span<const Tensor> d_shortcuts);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ModelConfig config_;
  std::vector<ConvBlock> blocks_;
  ParameterSet params_;
};

class Decoder {
 public:
  struct Pass {
    std::vector<BlockCache> blocks;
  };
  struct Gradients {
    std::vector<Tensor> d_new_parts;
    std::vector<Tensor> d_ref_parts;
    std::vector<Tensor> d_shortcuts;
  };

  Decoder() = default;
  explicit Decoder(const ModelConfig& config);

  void initialize(Rng& rng, InitOptions options);
  // Residual image [N,3,S,S] in [-2,2] from Dec([z_new, z_ref]) with the
  // shortcuts of z_ref.
  Tensor forward(const LatentCode& z_new, const LatentCode& z_ref, Pass* cache = nullptr) const;
  Gradients backward(const Pass& cache, const Tensor& d_residual);

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ModelConfig config_;
  std::vector<ConvBlock> blocks_;
  ParameterSet params_;
};

class Discriminator {
 public:
  struct Pass {
    Tensor labels_input;
    std::vector<BlockCache> blocks;
    Tensor logits;
  };

  Discriminator() = default;
  // scale 1 sees full resolution, scale 2 a 2x average-pooled copy.
  Discriminator(const ModelConfig& config, int scale);

  void initialize(Rng& rng, InitOptions options);
  // Logits [N]; scores are sigmoid(logits).
  Tensor forward(const Tensor& images, std::span<const AttributeLabelVector> labels, Pass* cache = nullptr) const;
  // d_logits: [N]. Returns the gradient with respect to the full-resolution
  // images when want_input_grad is set. Parameter gradients are accumulated
  // only when accumulate_params is set.
  Tensor backward(const Pass& cache, const Tensor& d_logits, bool want_input_grad, bool accumulate_params = true);

  int scale() const noexcept { return scale_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ModelConfig config_;
  int scale_ = 1;
  std::vector<ConvBlock> blocks_;
  std::size_t fc_weight_ = 0, fc_bias_ = 0;
  ParameterSet params_;
};

struct Model {
  ModelConfig config;
  Encoder encoder;
  Decoder decoder;
  Discriminator d1;
  Discriminator d2;

  static Model create(const ModelConfig& config, std::uint64_t seed, InitOptions options = {});

  // Networks in checkpoint order: encoder, decoder, discriminator_1, discriminator_2.
  std::vector<std::pair<std::string, ParameterSet*>> networks();
  std::vector<std::pair<std::string, const ParameterSet*>> networks() const;
};

// Single-call forms of the model operations.
LatentCode encode(const Tensor& images, const Model& model);
Tensor decode(const LatentCode& z_new, const LatentCode& z_ref, const Model& model);
// Scores in (0,1), one per image. scale selects d1 (1) or d2 (2).
std::vector<double> discriminate(const Tensor& images, std::span<const AttributeLabelVector> labels, int scale,
                                 const Model& model);

double sigmoid(double x);

}  // namespace ELEGANT_ABI
}  // namespace elegant
