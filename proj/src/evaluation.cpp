#include "elegant/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Eigenvalues>

#include "elegant/error.hpp"
#include "elegant/rng.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

void require_psd(const Eigen::MatrixXd& c, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericsError(std::string("eigendecomposition failed for ") + which);
  const double top = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-6 * top)
    throw ContractError(std::string(which) + " is not positive semidefinite (min eigenvalue " +
                        std::to_string(es.eigenvalues().minCoeff()) + ")");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  if (es.info() != Eigen::Success) throw NumericsError("eigendecomposition failed");
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

// Tr((C1 C2)^(1/2)) through the symmetric C1^(1/2) C2 C1^(1/2).
double trace_sqrt_product(const Eigen::MatrixXd& c1, const Eigen::MatrixXd& c2) {
  const Eigen::MatrixXd s1 = psd_sqrt(c1);
  const Eigen::MatrixXd m = sym(s1 * c2 * s1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericsError("eigendecomposition of the covariance product failed");
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd x = es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
  const double resid = (x * x - m).norm();
  if (resid > 1e-4 * m.norm() + 1e-12)
    throw NumericsError("matrix square root residual " + std::to_string(resid) + " exceeds tolerance (|M| = " +
                        std::to_string(m.norm()) + ")");
  return r.sum();
}

void add_scaled(Tensor& dst, const Tensor& src, real w) {
  real* d = dst.data();
  const real* s = src.data();
  for (std::size_t k = 0; k < dst.numel(); ++k) d[k] += w * s[k];
}

// Weighted sum of part tensors; a weight of exactly 1 copies that input.
Tensor mix_parts(std::span<const Tensor* const> parts, std::span<const double> weights) {
  for (std::size_t k = 0; k < parts.size(); ++k)
    if (weights[k] == 1.0) return *parts[k];
  Tensor out(parts[0]->shape(), real(0));
  for (std::size_t k = 0; k < parts.size(); ++k)
    if (weights[k] != 0.0) add_scaled(out, *parts[k], static_cast<real>(weights[k]));
  return out;
}

Tensor single(const ImageTensor& image) { return to_batch(std::span(&image, 1)); }

void require_attribute(const Model& model, int i) {
  if (i < 0 || i >= model.config.n_attributes)
    throw IndexError("attribute index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(model.config.n_attributes) + ")");
}

ImageTensor decode_compose(const Model& model, const LatentCode& z_new, const LatentCode& z_ref, const Tensor& image) {
  return from_batch(compose(image, decode(z_new, z_ref, model)), 0);
}

double grid_factor(int k, int n) { return n > 1 ? static_cast<double>(k) / (n - 1) : 0.0; }

std::vector<std::size_t> rows_with(const AttributeTable& table, int i, std::uint8_t bit) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < table.size(); ++r)
    if (table.labels()[r].bits[i] == bit) rows.push_back(r);
  std::sort(rows.begin(), rows.end(),
            [&](std::size_t a, std::size_t b) { return table.filenames()[a] < table.filenames()[b]; });
  return rows;
}

std::vector<ImageTensor> pick(const Dataset& d, const std::vector<std::size_t>& rows) {
  std::vector<ImageTensor> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(d.images[r]);
  return out;
}

}  // namespace

GaussianStats gaussian_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2)
    throw StatisticsError("gaussian_stats needs at least 2 samples, got " + std::to_string(features.rows()));
  GaussianStats s;
  s.count = static_cast<std::size_t>(features.rows());
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.cov = sym(centered.transpose() * centered / static_cast<double>(features.rows() - 1));
  return s;
}

double fid(const GaussianStats& s1, const GaussianStats& s2) {
  const auto d = s1.mu.size();
  if (s2.mu.size() != d || s1.cov.rows() != d || s1.cov.cols() != d || s2.cov.rows() != d || s2.cov.cols() != d)
    throw ContractError("fid: dimension mismatch (" + std::to_string(s1.mu.size()) + " vs " +
                        std::to_string(s2.mu.size()) + ")");
  require_psd(s1.cov, "first covariance");
  require_psd(s2.cov, "second covariance");
  const double mean_term = (s1.mu - s2.mu).squaredNorm();
  // Both orderings, so that swapping the arguments gives the same bits.
  const double cross = trace_sqrt_product(s1.cov, s2.cov) + trace_sqrt_product(s2.cov, s1.cov);
  const double d2 = mean_term + (s1.cov.trace() + s2.cov.trace()) - cross;
  return std::max(d2, 0.0);
}

RandomProjectionExtractor::RandomProjectionExtractor(int dim, int pooled, std::uint64_t seed)
    : dim_(dim), pooled_(pooled) {
  if (dim < 1 || pooled < 1) throw ConfigError("random projection: dim and pooled must be positive");
  const int in = 3 * pooled * pooled;
  projection_.resize(dim, in);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < in; ++c) projection_(r, c) = rng.normal() * scale;
}

namespace {
Eigen::VectorXd pool(const ImageTensor& image, int p) {
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(3 * p * p);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(p * p);
  for (int y = 0; y < image.height; ++y) {
    const int by = static_cast<int>(static_cast<long>(y) * p / image.height);
    for (int x = 0; x < image.width; ++x) {
      const int bx = static_cast<int>(static_cast<long>(x) * p / image.width);
      const int cell = by * p + bx;
      counts[cell] += 1;
      for (int c = 0; c < 3; ++c) sums[c * p * p + cell] += image.at(x, y, c);
    }
  }
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < p * p; ++k) sums[c * p * p + k] /= std::max(counts[k], 1.0);
  return sums;
}
}  // namespace

std::vector<double> RandomProjectionExtractor::extract(const ImageTensor& image) const {
  const Eigen::VectorXd f = projection_ * pool(image, pooled_);
  return {f.data(), f.data() + f.size()};
}

std::vector<double> PooledPixelExtractor::extract(const ImageTensor& image) const {
  const Eigen::VectorXd f = pool(image, pooled_);
  return {f.data(), f.data() + f.size()};
}

std::vector<std::string> feature_extractor_names() { return {"random_projection", "pooled_pixels"}; }

std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& name) {
  if (name == "random_projection") return std::make_unique<RandomProjectionExtractor>();
  if (name == "pooled_pixels") return std::make_unique<PooledPixelExtractor>();
  throw ConfigError("unknown feature extractor '" + name + "'; valid extractors: random_projection, pooled_pixels");
}

Eigen::MatrixXd extract_features(const FeatureExtractor& extractor, std::span<const ImageTensor> images) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), extractor.dim());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(images.size()); ++k) {
    const auto f = extractor.extract(images[k]);
    for (int c = 0; c < extractor.dim(); ++c) out(k, c) = f[c];
  }
  return out;
}

GaussianStats image_stats(const FeatureExtractor& extractor, std::span<const ImageTensor> images) {
  return gaussian_stats(extract_features(extractor, images));
}

LatentCode blend_parts(const LatentCode& base, const LatentCode& other, std::span<const PartBlend> blends) {
  if (base.n_attributes() != other.n_attributes()) throw ShapeError("blend_parts: part counts differ");
  LatentCode out = base;
  std::set<int> seen;
  for (const auto& b : blends) {
    if (b.attribute < 0 || b.attribute >= base.n_attributes())
      throw IndexError("attribute index " + std::to_string(b.attribute) + " out of range [0, " +
                       std::to_string(base.n_attributes()) + ")");
    if (!(b.alpha >= 0.0 && b.alpha <= 1.0))
      throw ContractError("blend factor " + std::to_string(b.alpha) + " outside [0, 1]");
    if (!seen.insert(b.attribute).second)
      throw ContractError("attribute " + std::to_string(b.attribute) + " listed twice");
    require_same_shape(base.parts[b.attribute], other.parts[b.attribute], "blend_parts");
    const Tensor* parts[] = {&base.parts[b.attribute], &other.parts[b.attribute]};
    const double w[] = {1.0 - b.alpha, b.alpha};
    out.parts[b.attribute] = b.alpha == 0.0 ? base.parts[b.attribute] : mix_parts(parts, w);
  }
  return out;
}

TransferResult transfer(const Model& model, const Tensor& images_a, const Tensor& images_b,
                        std::span<const PartBlend> blends) {
  const LatentCode za = encode(images_a, model);
  const LatentCode zb = encode(images_b, model);
  TransferResult r;
  r.residual_c = decode(blend_parts(za, zb, blends), za, model);
  r.residual_d = decode(blend_parts(zb, za, blends), zb, model);
  r.c = compose(images_a, r.residual_c);
  r.d = compose(images_b, r.residual_d);
  return r;
}

Tensor reconstruct(const Model& model, const Tensor& images) {
  const LatentCode z = encode(images, model);
  return compose(images, decode(z, z, model));
}

ImageGrid interpolate_single(const Model& model, const ImageTensor& image, std::span<const ImageTensor> refs,
                             int attribute, int steps) {
  require_attribute(model, attribute);
  if (refs.empty() || refs.size() > 3) throw ContractError("interpolate_single takes 1 to 3 references");
  if (steps < 2) throw ContractError("interpolate_single needs steps >= 2");
  const Tensor a = single(image);
  const LatentCode za = encode(a, model);
  std::vector<LatentCode> zr;
  for (const auto& r : refs) zr.push_back(encode(single(r), model));

  ImageGrid grid;
  auto cell = [&](std::span<const Tensor* const> parts, std::span<const double> w) {
    LatentCode z = za;
    z.parts[attribute] = mix_parts(parts, w);
    grid.images.push_back(decode_compose(model, z, za, a));
  };

  const Tensor* pa = &za.parts[attribute];
  if (refs.size() == 1) {
    grid.rows = 1, grid.cols = steps;
    for (int k = 0; k < steps; ++k) {
      const double t = grid_factor(k, steps);
      const Tensor* p[] = {pa, &zr[0].parts[attribute]};
      const double w[] = {1.0 - t, t};
      cell(p, w);
    }
    return grid;
  }
  Tensor avg;
  const Tensor* p1 = &zr[0].parts[attribute];
  const Tensor* p2 = &zr[1].parts[attribute];
  const Tensor* p3;
  if (refs.size() == 3) {
    p3 = &zr[2].parts[attribute];
  } else {
    avg = *p1;
    avg += *p2;
    avg *= real(0.5);
    p3 = &avg;
  }
  grid.rows = grid.cols = steps;
  for (int r = 0; r < steps; ++r) {
    const double u = grid_factor(r, steps);
    for (int c = 0; c < steps; ++c) {
      const double v = grid_factor(c, steps);
      const Tensor* p[] = {pa, p1, p2, p3};
      const double w[] = {(1 - u) * (1 - v), (1 - u) * v, u * (1 - v), u * v};
      cell(p, w);
    }
  }
  return grid;
}

ImageGrid interpolate_matrix(const Model& model, const ImageTensor& image, const ImageTensor& ref1, int i,
                             const ImageTensor& ref2, int j, int rows, int cols) {
  require_attribute(model, i);
  require_attribute(model, j);
  if (i == j) throw ContractError("interpolate_matrix needs two different attributes");
  if (rows < 1 || cols < 1) throw ContractError("interpolate_matrix needs rows, cols >= 1");
  const Tensor a = single(image);
  const LatentCode za = encode(a, model);
  const LatentCode z1 = encode(single(ref1), model);
  const LatentCode z2 = encode(single(ref2), model);
  ImageGrid grid{rows, cols, {}};
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      LatentCode z = blend_parts(za, z1, std::vector<PartBlend>{{i, grid_factor(r, rows)}});
      z = blend_parts(z, z2, std::vector<PartBlend>{{j, grid_factor(c, cols)}});
      grid.images.push_back(decode_compose(model, z, za, a));
    }
  }
  return grid;
}

ImageU8 tile_grid(std::span<const ImageU8> images, int rows, int cols) {
  if (rows < 1 || cols < 1 || images.size() != static_cast<std::size_t>(rows) * cols)
    throw ContractError("emit_grid: " + std::to_string(images.size()) + " images for a " + std::to_string(rows) + "x" +
                        std::to_string(cols) + " grid");
  const int w = images[0].width, h = images[0].height;
  for (const auto& im : images)
    if (im.width != w || im.height != h) throw ShapeError("emit_grid: images differ in size");
  constexpr int gutter = 2;
  ImageU8 out(cols * w + (cols - 1) * gutter, rows * h + (rows - 1) * gutter, 255);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const ImageU8& im = images[static_cast<std::size_t>(r) * cols + c];
      for (int y = 0; y < h; ++y)
        std::copy_n(im.pixels.data() + static_cast<std::size_t>(y) * w * 3, static_cast<std::size_t>(w) * 3,
                    &out.at(c * (w + gutter), r * (h + gutter) + y, 0));
    }
  return out;
}

ImageU8 tile_grid(const ImageGrid& grid) {
  std::vector<ImageU8> bytes;
  for (const auto& im : grid.images) bytes.push_back(denormalize(im));
  return tile_grid(bytes, grid.rows, grid.cols);
}

void emit_grid(std::span<const ImageU8> images, int rows, int cols, const std::filesystem::path& path) {
  write_png(path, tile_grid(images, rows, cols));
}

ImageU8 residual_to_image(const ImageTensor& residual) {
  ImageU8 out(residual.width, residual.height);
  for (std::size_t k = 0; k < residual.pixels.size(); ++k) {
    const double v = (static_cast<double>(residual.pixels[k]) + 2.0) / 4.0 * 255.0;
    out.pixels[k] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
  }
  return out;
}

TransferOutcome run_transfer_pairs(const Model& model, const Dataset& data, const SyntheticOracle& oracle, int i,
                                   std::size_t max_pairs, int batch) {
  require_attribute(model, i);
  const auto pos = rows_with(data.table, i, 1);
  const auto neg = rows_with(data.table, i, 0);
  TransferOutcome out;
  out.pairs = std::min(pos.size(), neg.size());
  if (max_pairs) out.pairs = std::min(out.pairs, max_pairs);
  const PartBlend blend{i, 1.0};
  for (std::size_t start = 0; start < out.pairs; start += batch) {
    const std::size_t end = std::min(out.pairs, start + batch);
    const std::vector<std::size_t> ra(pos.begin() + start, pos.begin() + end);
    const std::vector<std::size_t> rb(neg.begin() + start, neg.begin() + end);
    const auto r = transfer(model, data.gather(ra).images, data.gather(rb).images, std::span(&blend, 1));
    for (std::size_t k = 0; k < ra.size(); ++k) {
      ImageTensor c = from_batch(r.c, static_cast<int>(k));
      ImageTensor d = from_batch(r.d, static_cast<int>(k));
      if (oracle.classify(c, i) == 0 && oracle.classify(d, i) == 1) ++out.successes;
      out.removed.push_back(std::move(c));
      out.gained.push_back(std::move(d));
    }
  }
  return out;
}

double transfer_accuracy(const Model& model, const Dataset& data, const SyntheticOracle& oracle, int i,
                         std::size_t max_pairs) {
  return run_transfer_pairs(model, data, oracle, i, max_pairs).accuracy();
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json fids = nlohmann::json::object(), acc = nlohmann::json::object();
  for (const auto& a : attributes) {
    fids[a.name] = {{"add", a.fid_add},
                    {"remove", a.fid_remove},
                    {"add_vs_negative", a.fid_add_opposite},
                    {"remove_vs_positive", a.fid_remove_opposite}};
    acc[a.name] = a.transfer_accuracy;
  }
  return {{"extractor", extractor}, {"fid_per_attribute", fids}, {"transfer_accuracy", acc}};
}

EvaluationReport evaluate_model(const Model& model, const std::vector<std::string>& attribute_names,
                                const Dataset& data, const SyntheticOracle& oracle, const FeatureExtractor& extractor,
                                std::size_t max_pairs) {
  if (static_cast<int>(attribute_names.size()) != model.config.n_attributes)
    throw ConfigError("attribute name count does not match the model");
  EvaluationReport report;
  report.extractor = extractor.name();
  for (int i = 0; i < model.config.n_attributes; ++i) {
    const TransferOutcome t = run_transfer_pairs(model, data, oracle, i, max_pairs);
    const auto real_pos = image_stats(extractor, pick(data, rows_with(data.table, i, 1)));
    const auto real_neg = image_stats(extractor, pick(data, rows_with(data.table, i, 0)));
    const auto gained = image_stats(extractor, t.gained);
    const auto removed = image_stats(extractor, t.removed);
    AttributeReport a;
    a.name = attribute_names[i];
    a.transfer_accuracy = t.accuracy();
    a.fid_add = fid(gained, real_pos);
    a.fid_remove = fid(removed, real_neg);
    a.fid_add_opposite = fid(gained, real_neg);
    a.fid_remove_opposite = fid(removed, real_pos);
    report.attributes.push_back(a);
  }
  return report;
}

nlohmann::json compare_datasets(const Dataset& a, const Dataset& b, const FeatureExtractor& extractor) {
  if (a.table.attribute_names() != b.table.attribute_names())
    throw ConfigError("compared datasets have different attribute lists");
  nlohmann::json fids = nlohmann::json::object();
  for (std::size_t i = 0; i < a.table.attribute_names().size(); ++i) {
    const int k = static_cast<int>(i);
    const double pos = fid(image_stats(extractor, pick(a, rows_with(a.table, k, 1))),
                           image_stats(extractor, pick(b, rows_with(b.table, k, 1))));
    const double neg = fid(image_stats(extractor, pick(a, rows_with(a.table, k, 0))),
                           image_stats(extractor, pick(b, rows_with(b.table, k, 0))));
    fids[a.table.attribute_names()[i]] = {{"positive", pos}, {"negative", neg}};
  }
  return {{"extractor", extractor.name()}, {"fid_per_attribute", fids}};
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
