#pragma once

// CelebA-format ingestion, five-point alignment, and per-attribute
// positive/negative sampling.

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "elegant/image.hpp"
#include "elegant/model.hpp"
#include "elegant/rng.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

class AttributeTable {
 public:
  AttributeTable() = default;
  explicit AttributeTable(std::vector<std::string> attribute_names);

  void add(std::string filename, AttributeLabelVector labels);

  const std::vector<std::string>& attribute_names() const noexcept { return names_; }
  const std::vector<std::string>& filenames() const noexcept { return files_; }
  const std::vector<AttributeLabelVector>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return files_.size(); }

  const AttributeLabelVector* find(const std::string& filename) const;
  // Throws ConfigError listing the valid names.
  int attribute_index(const std::string& name) const;

  // Table restricted to the named attributes, in the given order.
  AttributeTable select(std::span<const std::string> names) const;

  bool operator==(const AttributeTable& other) const {
    return names_ == other.names_ && files_ == other.files_ && labels_ == other.labels_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::string> files_;
  std::vector<AttributeLabelVector> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

// list_attr_celeba.txt: count line, header of names, rows "file v1 .. vn" with v in {-1, 1}.
AttributeTable parse_attribute_file(std::istream& in);
AttributeTable read_attribute_file(const std::filesystem::path& path);
void write_attribute_file(std::ostream& out, const AttributeTable& table);
void write_attribute_file(const std::filesystem::path& path, const AttributeTable& table);

struct Point2 {
  double x = 0;
  double y = 0;
};

// Left eye, right eye, nose, left mouth corner, right mouth corner.
struct LandmarkSet {
  std::array<Point2, 5> points;
};

// list_landmarks_(align_)celeba.txt: count line, header, rows "file x1 y1 .. x5 y5".
std::vector<std::pair<std::string, LandmarkSet>> parse_landmark_file(std::istream& in);

// dst = scale * R(rotation) * src + (tx, ty)
struct SimilarityTransform {
  double scale = 1;
  double rotation = 0;  // radians
  double tx = 0;
  double ty = 0;

  Point2 apply(Point2 p) const;
  Point2 inverse(Point2 p) const;
};

// Least-squares similarity (no reflection) mapping src onto dst.
SimilarityTransform solve_similarity(std::span<const Point2> src, std::span<const Point2> dst);

// The five-point template for a square output of the given side.
std::array<Point2, 5> canonical_template(int output_size);

struct AlignmentResult {
  ImageU8 crop;       // resampled bytes
  ImageTensor image;  // normalize(crop)
  // Maps source coordinates (relative to `anchor`) onto the template.
  SimilarityTransform transform;
  Point2 anchor;
  // RMS landmark distance to the template after the transform, output pixels.
  double residual = 0;
};

// The source is sampled in coordinates relative to floor(landmark 0), so an
// integer shift of image and landmarks gives a bit-identical crop.
AlignmentResult align_and_crop(const ImageU8& image, const LandmarkSet& landmarks, int output_size);

// Normalised images held in memory alongside their labels.
struct Dataset {
  AttributeTable table;
  int image_size = 0;
  std::vector<ImageTensor> images;

  Batch gather(std::span<const std::size_t> rows) const;
};

// Loads every row of `table` from `image_dir`; images must be square with side image_size.
Dataset load_dataset(const std::filesystem::path& image_dir, const AttributeTable& table, int image_size);

struct SamplerState {
  std::string rng;
  struct Pool {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  // positives[i], negatives[i] for attribute i
  std::vector<Pool> positives;
  std::vector<Pool> negatives;

  bool operator==(const SamplerState& o) const;
};

// Draws batchA from rows with bit i set and batchB from rows without it.
// Each pool is visited in a shuffled order without replacement and
// reshuffled when exhausted.
class PairSampler {
 public:
  PairSampler() = default;
  PairSampler(const AttributeTable& table, std::uint64_t seed);

  // Throws DatasetError naming the attribute when a pool is empty.
  void require_nonempty(int attribute) const;
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> sample(int attribute, int batch_size);

  const SamplerState& state() const noexcept { return state_; }
  void restore(SamplerState state);

 private:
  std::vector<std::size_t> draw(SamplerState::Pool& pool, int count);

  std::vector<std::string> names_;
  Rng rng_;
  SamplerState state_;
};

}  // namespace ELEGANT_ABI
}  // namespace elegant
