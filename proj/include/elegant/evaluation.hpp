#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "elegant/data.hpp"
#include "elegant/image.hpp"
#include "elegant/model.hpp"
#include "elegant/synthetic.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  std::size_t count = 0;
};

// Sample mean and unbiased covariance, symmetrised. Rows are samples.
// Throws StatisticsError for fewer than two rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

// |mu1 - mu2|^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)). The square root is taken of
// the similar symmetric matrix C1^(1/2) C2 C1^(1/2) with negative eigenvalues
// clipped to zero.
double fid(const GaussianStats& s1, const GaussianStats& s2);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<double> extract(const ImageTensor& image) const = 0;
};

// Average-pools to pooled x pooled, then projects with a fixed Gaussian
// matrix scaled by 1/sqrt(input_dim).
class RandomProjectionExtractor : public FeatureExtractor {
 public:
  explicit RandomProjectionExtractor(int dim = 64, int pooled = 16, std::uint64_t seed = 0x5eed);
  std::string name() const override { return "random_projection"; }
  int dim() const override { return dim_; }
  std::vector<double> extract(const ImageTensor& image) const override;

 private:
  int dim_, pooled_;
  Eigen::MatrixXd projection_;
};

// Pooled pixels without projection, d = 3 * pooled^2.
class PooledPixelExtractor : public FeatureExtractor {
 public:
  explicit PooledPixelExtractor(int pooled = 4) : pooled_(pooled) {}
  std::string name() const override { return "pooled_pixels"; }
  int dim() const override { return 3 * pooled_ * pooled_; }
  std::vector<double> extract(const ImageTensor& image) const override;

 private:
  int pooled_;
};

// "random_projection" (default) or "pooled_pixels"; ConfigError otherwise.
std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& name = "random_projection");
std::vector<std::string> feature_extractor_names();

Eigen::MatrixXd extract_features(const FeatureExtractor& extractor, std::span<const ImageTensor> images);
GaussianStats image_stats(const FeatureExtractor& extractor, std::span<const ImageTensor> images);

// Blend weights per attribute part; parts not listed keep the first code.
struct PartBlend {
  int attribute = 0;
  double alpha = 1.0;
};

// Copy of `base` whose listed parts are (1 - alpha) * base + alpha * other.
// alpha 0 and 1 copy the endpoint exactly.
LatentCode blend_parts(const LatentCode& base, const LatentCode& other, std::span<const PartBlend> blends);

// Exchange of the listed parts between A and B with per-part blend factors,
// decoded once per image. Residuals are the decoder outputs before composing.
struct TransferResult {
  Tensor c, d;
  Tensor residual_c, residual_d;
};
TransferResult transfer(const Model& model, const Tensor& images_a, const Tensor& images_b,
                        std::span<const PartBlend> blends);

// A' = compose(A, Dec(zA, zA)).
Tensor reconstruct(const Model& model, const Tensor& images);

struct ImageGrid {
  int rows = 0;
  int cols = 0;
  std::vector<ImageTensor> images;  // row-major
};

// One reference: 1 x steps row, t = k / (steps - 1).
// Two or three references: steps x steps grid, cell (r, c) blends the corners
// A (0,0), ref1 (0, end), ref2 (end, 0), ref3 (end, end) bilinearly; with two
// references ref3's part is the average of the other two.
ImageGrid interpolate_single(const Model& model, const ImageTensor& image, std::span<const ImageTensor> refs,
                             int attribute, int steps);

// Cell (r, c) blends attribute i towards ref1 by r / (rows - 1) and attribute j
// towards ref2 by c / (cols - 1), in one decode.
ImageGrid interpolate_matrix(const Model& model, const ImageTensor& image, const ImageTensor& ref1, int i,
                             const ImageTensor& ref2, int j, int rows, int cols);

// Tiles a grid with 2-pixel white gutters.
ImageU8 tile_grid(std::span<const ImageU8> images, int rows, int cols);
void emit_grid(std::span<const ImageU8> images, int rows, int cols, const std::filesystem::path& path);
ImageU8 tile_grid(const ImageGrid& grid);

// Visualises a residual in [-2, 2] as bytes (R + 2) / 4 * 255.
ImageU8 residual_to_image(const ImageTensor& residual);

// Held-out pairs from a labelled dataset: positives and negatives for
// attribute i, paired in row order up to the shorter pool (and max_pairs).
struct TransferOutcome {
  std::size_t pairs = 0;
  std::size_t successes = 0;
  std::vector<ImageTensor> gained;  // D images
  std::vector<ImageTensor> removed; // C images
  double accuracy() const { return pairs ? static_cast<double>(successes) / pairs : 0.0; }
};
TransferOutcome run_transfer_pairs(const Model& model, const Dataset& data, const SyntheticOracle& oracle, int i,
                                   std::size_t max_pairs = 0, int batch = 32);

// Fraction of pairs with oracle(C, i) = 0 and oracle(D, i) = 1.
double transfer_accuracy(const Model& model, const Dataset& data, const SyntheticOracle& oracle, int i,
                         std::size_t max_pairs = 0);

struct AttributeReport {
  std::string name;
  double transfer_accuracy = 0;
  double fid_add = 0;           // gained vs real positives
  double fid_remove = 0;        // removed vs real negatives
  double fid_add_opposite = 0;  // gained vs real negatives
  double fid_remove_opposite = 0;
};

struct EvaluationReport {
  std::string extractor;
  std::vector<AttributeReport> attributes;
  nlohmann::json to_json() const;
};

// Full report on a synthetic test set.
EvaluationReport evaluate_model(const Model& model, const std::vector<std::string>& attribute_names,
                                const Dataset& data, const SyntheticOracle& oracle, const FeatureExtractor& extractor,
                                std::size_t max_pairs = 0);

// Per-attribute FID between two datasets' positive sets and negative sets.
nlohmann::json compare_datasets(const Dataset& a, const Dataset& b, const FeatureExtractor& extractor);

}  // namespace ELEGANT_ABI
}  // namespace elegant
