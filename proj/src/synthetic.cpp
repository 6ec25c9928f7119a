#include "elegant/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "elegant/error.hpp"
#include "elegant/rng.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

// Unit-square geometry.
constexpr double kEyeY = 0.44, kEyeDx = 0.14, kEyeR = 0.035;
constexpr double kGlassIn = 0.075, kGlassOut = 0.115;
constexpr double kSmileCy = 0.70, kSmileIn = 0.10, kSmileOut = 0.145;

double sq(double v) { return v * v; }

bool in_region(const std::string& a, double x, double y) {
  if (a == "bangs") return y >= 0.06 && y < 0.22 && x >= 0.22 && x < 0.78;
  if (a == "eyeglasses") {
    for (double cx : {0.5 - kEyeDx, 0.5 + kEyeDx}) {
      const double r = std::sqrt(sq(x - cx) + sq(y - kEyeY));
      if (r >= kGlassIn && r < kGlassOut) return true;
    }
    return false;
  }
  if (a == "smile") {
    const double r = std::sqrt(sq(x - 0.5) + sq(y - kSmileCy));
    return y > kSmileCy + 0.02 && r >= kSmileIn && r < kSmileOut;
  }
  if (a == "mustache") return y >= 0.615 && y < 0.665 && x >= 0.38 && x < 0.62;
  return false;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

const std::vector<std::string>& synthetic_attribute_names() {
  static const std::vector<std::string> names = {"bangs", "eyeglasses", "smile", "mustache"};
  return names;
}

void SyntheticSpec::validate() const {
  if (image_size < 16) throw ConfigError("synthetic image_size must be >= 16, got " + std::to_string(image_size));
  if (attributes.empty()) throw ConfigError("synthetic spec needs at least one attribute");
  std::set<std::string> seen;
  for (const auto& a : attributes) {
    const auto& known = synthetic_attribute_names();
    if (std::find(known.begin(), known.end(), a) == known.end()) {
      std::string valid;
      for (const auto& k : known) valid += (valid.empty() ? "" : ", ") + k;
      throw ConfigError("unknown synthetic attribute '" + a + "'; valid attributes: " + valid);
    }
    if (!seen.insert(a).second) throw ConfigError("synthetic attribute '" + a + "' listed twice");
  }
}

std::vector<std::uint8_t> synthetic_region(const std::string& attribute, int size) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      m[static_cast<std::size_t>(y) * size + x] = in_region(attribute, (x + 0.5) / size, (y + 0.5) / size);
  return m;
}

ImageU8 render_synthetic(const SyntheticSpec& spec, std::uint64_t index, const AttributeLabelVector& bits) {
  spec.validate();
  if (static_cast<int>(bits.size()) != spec.n_attributes())
    throw ShapeError("render_synthetic: " + std::to_string(bits.size()) + " bits for " +
                     std::to_string(spec.n_attributes()) + " attributes");
  Rng rng(mix(spec.seed, index));
  const int S = spec.image_size;
  double bg[3], skin[3], mark[3];
  for (double& c : bg) c = 140 + 60 * rng.uniform();
  const double tone = rng.uniform();
  skin[0] = 200 + 30 * tone, skin[1] = 170 + 30 * tone, skin[2] = 150 + 30 * tone;
  const double dark = 8 + 30 * rng.uniform();
  for (double& c : mark) c = dark + 10 * rng.uniform();
  const double face_rx = 0.30 + 0.03 * rng.uniform(), face_ry = 0.38 + 0.03 * rng.uniform();

  ImageU8 out(S, S);
  for (int py = 0; py < S; ++py) {
    for (int px = 0; px < S; ++px) {
      const double x = (px + 0.5) / S, y = (py + 0.5) / S;
      const double* base = sq((x - 0.5) / face_rx) + sq((y - 0.55) / face_ry) <= 1.0 ? skin : bg;
      double col[3] = {base[0], base[1], base[2]};
      for (double cx : {0.5 - kEyeDx, 0.5 + kEyeDx})
        if (sq(x - cx) + sq(y - kEyeY) < sq(kEyeR)) col[0] = 60, col[1] = 40, col[2] = 30;
      for (int i = 0; i < spec.n_attributes(); ++i)
        if (bits.bits[i] && in_region(spec.attributes[i], x, y)) std::copy(mark, mark + 3, col);
      for (int c = 0; c < 3; ++c) out.at(px, py, c) = to_byte(col[c] + 8 * (rng.uniform() - 0.5));
    }
  }
  return out;
}

template <typename Pixel>
double SyntheticOracle::region_mean(int width, int height, int i, Pixel pixel) const {
  if (i < 0 || i >= spec_.n_attributes())
    throw IndexError("attribute index " + std::to_string(i) + " out of range [0, " +
                     std::to_string(spec_.n_attributes()) + ")");
  if (width != spec_.image_size || height != spec_.image_size)
    throw ShapeError("oracle expects " + std::to_string(spec_.image_size) + "x" + std::to_string(spec_.image_size) +
                     " images, got " + std::to_string(width) + "x" + std::to_string(height));
  const auto& region = regions_[i];
  double sum = 0;
  std::size_t n = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (region[static_cast<std::size_t>(y) * width + x]) {
        sum += 0.299 * pixel(x, y, 0) + 0.587 * pixel(x, y, 1) + 0.114 * pixel(x, y, 2);
        ++n;
      }
  return sum / static_cast<double>(n);
}

double SyntheticOracle::statistic(const ImageU8& image, int i) const {
  return region_mean(image.width, image.height, i, [&](int x, int y, int c) { return double(image.at(x, y, c)); });
}

double SyntheticOracle::statistic(const ImageTensor& image, int i) const {
  return region_mean(image.width, image.height, i,
                     [&](int x, int y, int c) { return std::clamp((image.at(x, y, c) + 1.0) * 127.5, 0.0, 255.0); });
}

int SyntheticOracle::classify(const ImageU8& image, int i) const { return statistic(image, i) < thresholds_[i]; }
int SyntheticOracle::classify(const ImageTensor& image, int i) const { return statistic(image, i) < thresholds_[i]; }

SyntheticOracle SyntheticOracle::calibrate(const SyntheticSpec& spec, int samples) {
  spec.validate();
  if (samples < 1) throw ConfigError("oracle calibration needs at least one sample");
  SyntheticOracle o;
  o.spec_ = spec;
  for (const auto& a : spec.attributes) o.regions_.push_back(synthetic_region(a, spec.image_size));
  o.thresholds_.assign(spec.n_attributes(), 0.0);
  std::vector<double> max_pos(spec.n_attributes(), -1.0), min_neg(spec.n_attributes(), 1e9);
  // Calibration renders use indices far outside any generated set.
  Rng rng(mix(spec.seed, 0xca11b4a7e));
  for (int s = 0; s < samples; ++s) {
    for (int on = 0; on < 2; ++on) {
      AttributeLabelVector bits;
      for (int i = 0; i < spec.n_attributes(); ++i) bits.bits.push_back(rng.uniform() < 0.5);
      for (int i = 0; i < spec.n_attributes(); ++i) {
        AttributeLabelVector b = flip_label(bits, i, static_cast<std::uint8_t>(on));
        const ImageU8 im = render_synthetic(spec, (1ULL << 62) + 2ULL * s + on, b);
        const double stat = o.statistic(im, i);
        if (on)
          max_pos[i] = std::max(max_pos[i], stat);
        else
          min_neg[i] = std::min(min_neg[i], stat);
      }
    }
  }
  for (int i = 0; i < spec.n_attributes(); ++i) {
    if (!(max_pos[i] < min_neg[i]))
      throw NumericsError("oracle calibration: attribute '" + spec.attributes[i] + "' is not separable");
    o.thresholds_[i] = 0.5 * (max_pos[i] + min_neg[i]);
  }
  return o;
}

nlohmann::json SyntheticOracle::to_json() const {
  return {{"image_size", spec_.image_size},
          {"attributes", spec_.attributes},
          {"seed", spec_.seed},
          {"statistic", "mean_region_luminance"},
          {"thresholds", thresholds_}};
}

SyntheticOracle SyntheticOracle::from_json(const nlohmann::json& j) {
  SyntheticOracle o;
  try {
    o.spec_.image_size = j.at("image_size").get<int>();
    o.spec_.attributes = j.at("attributes").get<std::vector<std::string>>();
    o.spec_.seed = j.at("seed").get<std::uint64_t>();
    o.thresholds_ = j.at("thresholds").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("oracle spec: ") + e.what());
  }
  o.spec_.validate();
  if (static_cast<int>(o.thresholds_.size()) != o.spec_.n_attributes())
    throw ParseError("oracle spec: threshold count does not match attribute count");
  for (const auto& a : o.spec_.attributes) o.regions_.push_back(synthetic_region(a, o.spec_.image_size));
  return o;
}

SyntheticOracle SyntheticOracle::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open oracle spec " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void SyntheticOracle::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

SyntheticSet generate_synthetic(const SyntheticSpec& spec, int count) {
  spec.validate();
  if (count < 0) throw ConfigError("synthetic count must be non-negative");
  SyntheticSet set{AttributeTable(spec.attributes), {}};
  Rng rng(spec.seed);
  set.images.resize(count);
  std::vector<AttributeLabelVector> labels(count);
  for (int k = 0; k < count; ++k)
    for (int i = 0; i < spec.n_attributes(); ++i) labels[k].bits.push_back(rng.uniform() < 0.5);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < count; ++k) set.images[k] = render_synthetic(spec, static_cast<std::uint64_t>(k), labels[k]);
  for (int k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", k + 1);
    set.table.add(name, labels[k]);
  }
  return set;
}

SyntheticOracle write_synthetic(const std::filesystem::path& dir, const SyntheticSpec& spec, int count) {
  const SyntheticSet set = generate_synthetic(spec, count);
  const SyntheticOracle oracle = SyntheticOracle::calibrate(spec);
  std::filesystem::create_directories(dir / "images");
  for (std::size_t k = 0; k < set.images.size(); ++k) write_png(dir / "images" / set.table.filenames()[k], set.images[k]);
  write_attribute_file(dir / "list_attr.txt", set.table);
  oracle.save(dir / "oracle.json");
  return oracle;
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
