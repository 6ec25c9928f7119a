#pragma once

// Desk-scale stand-in for CelebA: a flat cartoon face with attributes drawn
// as dark marks in fixed, pairwise disjoint regions. The oracle reads the mean
// luminance of each region back.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "elegant/data.hpp"
#include "elegant/image.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

// bangs, eyeglasses, smile, mustache
const std::vector<std::string>& synthetic_attribute_names();

struct SyntheticSpec {
  int image_size = 64;
  std::vector<std::string> attributes = {"bangs", "smile"};
  std::uint64_t seed = 0;

  // Throws ConfigError for unknown or repeated attributes or a size below 16.
  void validate() const;
  int n_attributes() const { return static_cast<int>(attributes.size()); }
};

// Pixels belonging to the named attribute's region, row-major size*size.
std::vector<std::uint8_t> synthetic_region(const std::string& attribute, int size);

// Pure function of (spec.seed, index, bits).
ImageU8 render_synthetic(const SyntheticSpec& spec, std::uint64_t index, const AttributeLabelVector& bits);

class SyntheticOracle {
 public:
  // Thresholds at the midpoint between the darkest absent-attribute region and
  // the brightest present-attribute region over `samples` clean renders each.
  static SyntheticOracle calibrate(const SyntheticSpec& spec, int samples = 256);

  const SyntheticSpec& spec() const noexcept { return spec_; }
  const std::vector<double>& thresholds() const noexcept { return thresholds_; }

  // Mean luminance (0..255 scale) over the region of attribute i.
  double statistic(const ImageU8& image, int i) const;
  double statistic(const ImageTensor& image, int i) const;
  int classify(const ImageU8& image, int i) const;
  int classify(const ImageTensor& image, int i) const;

  nlohmann::json to_json() const;
  static SyntheticOracle from_json(const nlohmann::json& j);
  static SyntheticOracle load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  template <typename Pixel>
  double region_mean(int width, int height, int i, Pixel pixel) const;

  SyntheticSpec spec_;
  std::vector<double> thresholds_;
  std::vector<std::vector<std::uint8_t>> regions_;
};

struct SyntheticSet {
  AttributeTable table;
  std::vector<ImageU8> images;
};

// `count` renders with independent fair-coin attribute bits.
SyntheticSet generate_synthetic(const SyntheticSpec& spec, int count);

// Writes <dir>/images/*.png, <dir>/list_attr.txt and <dir>/oracle.json.
SyntheticOracle write_synthetic(const std::filesystem::path& dir, const SyntheticSpec& spec, int count);

}  // namespace ELEGANT_ABI
}  // namespace elegant
