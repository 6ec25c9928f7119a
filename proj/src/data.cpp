#include "elegant/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "elegant/error.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

bool next_line(std::istream& in, std::string& line, int& line_no) {
  if (!std::getline(in, line)) return false;
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

long parse_count(std::istream& in, int& line_no, const char* what) {
  std::string line;
  if (!next_line(in, line, line_no)) throw ParseError(std::string(what) + ": empty input");
  const auto tok = split_ws(line);
  try {
    std::size_t used = 0;
    if (tok.size() != 1) throw std::invalid_argument("");
    const long n = std::stol(tok[0], &used);
    if (used != tok[0].size() || n < 0) throw std::invalid_argument("");
    return n;
  } catch (const std::logic_error&) {
    throw ParseError(std::string(what) + ": line 1: expected an image count, got '" + line + "'");
  }
}

double parse_double(const std::string& tok, int line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ParseError(std::string(what) + ": line " + std::to_string(line_no) + ": bad number '" + tok + "'");
}

}  // namespace

AttributeTable::AttributeTable(std::vector<std::string> attribute_names) : names_(std::move(attribute_names)) {}

void AttributeTable::add(std::string filename, AttributeLabelVector labels) {
  if (labels.size() != names_.size())
    throw ShapeError("row " + filename + " has " + std::to_string(labels.size()) + " labels, table has " +
                     std::to_string(names_.size()) + " attributes");
  if (index_.count(filename)) throw DatasetError("duplicate filename " + filename);
  index_.emplace(filename, files_.size());
  files_.push_back(std::move(filename));
  labels_.push_back(std::move(labels));
}

const AttributeLabelVector* AttributeTable::find(const std::string& filename) const {
  auto it = index_.find(filename);
  return it == index_.end() ? nullptr : &labels_[it->second];
}

int AttributeTable::attribute_index(const std::string& name) const {
  for (std::size_t k = 0; k < names_.size(); ++k)
    if (names_[k] == name) return static_cast<int>(k);
  std::string valid;
  for (const auto& n : names_) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown attribute '" + name + "'; valid attributes: " + valid);
}

AttributeTable AttributeTable::select(std::span<const std::string> names) const {
  std::vector<int> cols;
  for (const auto& n : names) cols.push_back(attribute_index(n));
  AttributeTable out(std::vector<std::string>(names.begin(), names.end()));
  for (std::size_t r = 0; r < files_.size(); ++r) {
    AttributeLabelVector y;
    for (int c : cols) y.bits.push_back(labels_[r].bits[c]);
    out.add(files_[r], std::move(y));
  }
  return out;
}

AttributeTable parse_attribute_file(std::istream& in) {
  int line_no = 0;
  const long count = parse_count(in, line_no, "attribute file");
  std::string line;
  if (!next_line(in, line, line_no)) throw ParseError("attribute file: line 2: missing header");
  AttributeTable table(split_ws(line));
  if (table.attribute_names().empty()) throw ParseError("attribute file: line 2: no attribute names");
  const std::size_t n = table.attribute_names().size();
  while (next_line(in, line, line_no)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != n + 1)
      throw ParseError("attribute file: line " + std::to_string(line_no) + ": expected " + std::to_string(n) +
                       " values, got " + std::to_string(tok.size() - 1));
    AttributeLabelVector y;
    for (std::size_t k = 1; k <= n; ++k) {
      if (tok[k] == "1")
        y.bits.push_back(1);
      else if (tok[k] == "-1")
        y.bits.push_back(0);
      else
        throw ParseError("attribute file: line " + std::to_string(line_no) + ": value '" + tok[k] +
                         "' is not -1 or 1");
    }
    try {
      table.add(tok[0], std::move(y));
    } catch (const DatasetError& e) {
      throw ParseError("attribute file: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (static_cast<long>(table.size()) != count)
    throw ParseError("attribute file: line " + std::to_string(line_no) + ": declared " + std::to_string(count) +
                     " rows, found " + std::to_string(table.size()));
  return table;
}

AttributeTable read_attribute_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open attribute file " + path.string());
  return parse_attribute_file(in);
}

void write_attribute_file(std::ostream& out, const AttributeTable& table) {
  out << table.size() << '\n';
  for (std::size_t k = 0; k < table.attribute_names().size(); ++k)
    out << (k ? " " : "") << table.attribute_names()[k];
  out << '\n';
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.filenames()[r];
    for (auto b : table.labels()[r].bits) out << (b ? "  1" : " -1");
    out << '\n';
  }
}

void write_attribute_file(const std::filesystem::path& path, const AttributeTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_attribute_file(out, table);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::pair<std::string, LandmarkSet>> parse_landmark_file(std::istream& in) {
  int line_no = 0;
  const long count = parse_count(in, line_no, "landmark file");
  std::string line;
  if (!next_line(in, line, line_no)) throw ParseError("landmark file: line 2: missing header");
  std::vector<std::pair<std::string, LandmarkSet>> out;
  while (next_line(in, line, line_no)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 11)
      throw ParseError("landmark file: line " + std::to_string(line_no) + ": expected 10 coordinates, got " +
                       std::to_string(tok.size() - 1));
    LandmarkSet s;
    for (int k = 0; k < 5; ++k) {
      s.points[k].x = parse_double(tok[1 + 2 * k], line_no, "landmark file");
      s.points[k].y = parse_double(tok[2 + 2 * k], line_no, "landmark file");
    }
    out.emplace_back(tok[0], s);
  }
  if (static_cast<long>(out.size()) != count)
    throw ParseError("landmark file: line " + std::to_string(line_no) + ": declared " + std::to_string(count) +
                     " rows, found " + std::to_string(out.size()));
  return out;
}

Point2 SimilarityTransform::apply(Point2 p) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  return {scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty};
}

Point2 SimilarityTransform::inverse(Point2 p) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  const double x = (p.x - tx) / scale, y = (p.y - ty) / scale;
  return {c * x + s * y, -s * x + c * y};
}

SimilarityTransform solve_similarity(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size() || src.size() < 2) throw ContractError("solve_similarity: need >= 2 matched points");
  const double n = static_cast<double>(src.size());
  Point2 ms, md;
  for (std::size_t k = 0; k < src.size(); ++k) {
    ms.x += src[k].x / n, ms.y += src[k].y / n;
    md.x += dst[k].x / n, md.y += dst[k].y / n;
  }
  double dot = 0, cross = 0, var = 0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    const double sx = src[k].x - ms.x, sy = src[k].y - ms.y;
    const double dx = dst[k].x - md.x, dy = dst[k].y - md.y;
    dot += sx * dx + sy * dy;
    cross += sx * dy - sy * dx;
    var += sx * sx + sy * sy;
  }
  if (!(var > 1e-12)) throw AlignmentError("degenerate landmarks: zero spread");
  const double norm = std::hypot(dot, cross);
  if (!(norm > 0)) throw AlignmentError("degenerate landmarks: no rotation/scale fits the template");
  SimilarityTransform t;
  t.rotation = std::atan2(cross, dot);
  t.scale = norm / var;
  t.tx = 0, t.ty = 0;
  const Point2 rm = t.apply(ms);
  t.tx = md.x - rm.x;
  t.ty = md.y - rm.y;
  return t;
}

std::array<Point2, 5> canonical_template(int output_size) {
  // 112x96 reference, padded to 112x112 and pulled towards the centre to
  // leave hair and chin inside the crop.
  static constexpr double ref[5][2] = {
      {30.2946, 51.6963}, {65.5318, 51.5014}, {48.0252, 71.7366}, {33.5493, 92.3655}, {62.7299, 92.2041}};
  constexpr double shrink = 0.75;
  std::array<Point2, 5> out;
  const double s = output_size / 112.0;
  for (int k = 0; k < 5; ++k) {
    const double x = 56.0 + (ref[k][0] + 8.0 - 56.0) * shrink;
    const double y = 56.0 + (ref[k][1] - 56.0) * shrink;
    out[k] = {x * s, y * s};
  }
  return out;
}

AlignmentResult align_and_crop(const ImageU8& image, const LandmarkSet& landmarks, int output_size) {
  if (output_size <= 0) throw ConfigError("align_and_crop: output_size must be positive");
  if (image.width <= 0 || image.height <= 0) throw AlignmentError("align_and_crop: empty image");
  for (const auto& p : landmarks.points)
    if (!(p.x >= 0 && p.y >= 0 && p.x <= image.width - 1 && p.y <= image.height - 1))
      throw AlignmentError("landmark (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                           ") outside the source image");

  AlignmentResult r;
  r.anchor = {std::floor(landmarks.points[0].x), std::floor(landmarks.points[0].y)};
  std::array<Point2, 5> local;
  for (int k = 0; k < 5; ++k) local[k] = {landmarks.points[k].x - r.anchor.x, landmarks.points[k].y - r.anchor.y};
  const auto tmpl = canonical_template(output_size);
  r.transform = solve_similarity(local, tmpl);

  double sq = 0;
  for (int k = 0; k < 5; ++k) {
    const Point2 q = r.transform.apply(local[k]);
    sq += (q.x - tmpl[k].x) * (q.x - tmpl[k].x) + (q.y - tmpl[k].y) * (q.y - tmpl[k].y);
  }
  r.residual = std::sqrt(sq / 5);

  const int ax = static_cast<int>(r.anchor.x), ay = static_cast<int>(r.anchor.y);
  auto clamp_x = [&](int x) { return std::clamp(x, 0, image.width - 1); };
  auto clamp_y = [&](int y) { return std::clamp(y, 0, image.height - 1); };
  r.crop = ImageU8(output_size, output_size);
  for (int v = 0; v < output_size; ++v) {
    for (int u = 0; u < output_size; ++u) {
      const Point2 p = r.transform.inverse({static_cast<double>(u), static_cast<double>(v)});
      const double fx = std::floor(p.x), fy = std::floor(p.y);
      const double wx = p.x - fx, wy = p.y - fy;
      const int x0 = clamp_x(static_cast<int>(fx) + ax), x1 = clamp_x(static_cast<int>(fx) + 1 + ax);
      const int y0 = clamp_y(static_cast<int>(fy) + ay), y1 = clamp_y(static_cast<int>(fy) + 1 + ay);
      for (int c = 0; c < 3; ++c) {
        const double val = (1 - wy) * ((1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c)) +
                           wy * ((1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c));
        r.crop.at(u, v, c) = static_cast<std::uint8_t>(std::clamp(std::floor(val + 0.5), 0.0, 255.0));
      }
    }
  }
  r.image = normalize(r.crop);
  return r;
}

Batch Dataset::gather(std::span<const std::size_t> rows) const {
  std::vector<ImageTensor> picked;
  Batch b;
  picked.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= images.size()) throw IndexError("dataset row " + std::to_string(r) + " out of range");
    picked.push_back(images[r]);
    b.labels.push_back(table.labels()[r]);
  }
  b.images = to_batch(picked);
  return b;
}

Dataset load_dataset(const std::filesystem::path& image_dir, const AttributeTable& table, int image_size) {
  Dataset ds;
  ds.table = table;
  ds.image_size = image_size;
  ds.images.resize(table.size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto path = image_dir / table.filenames()[r];
    if (!std::filesystem::exists(path)) throw DatasetError("missing image " + path.string());
    ImageU8 im = read_image(path);
    if (im.width != image_size || im.height != image_size)
      throw DatasetError("image " + path.string() + " is " + std::to_string(im.width) + "x" +
                         std::to_string(im.height) + ", expected " + std::to_string(image_size) + "x" +
                         std::to_string(image_size));
    ds.images[r] = normalize(im);
  }
  return ds;
}

bool SamplerState::operator==(const SamplerState& o) const {
  auto eq = [](const std::vector<Pool>& a, const std::vector<Pool>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k].order != b[k].order || a[k].cursor != b[k].cursor) return false;
    return true;
  };
  return rng == o.rng && eq(positives, o.positives) && eq(negatives, o.negatives);
}

PairSampler::PairSampler(const AttributeTable& table, std::uint64_t seed)
    : names_(table.attribute_names()), rng_(seed) {
  const std::size_t n = names_.size();
  state_.positives.resize(n);
  state_.negatives.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < table.size(); ++r)
      (table.labels()[r].bits[i] ? state_.positives[i] : state_.negatives[i]).order.push_back(r);
    rng_.shuffle(std::span(state_.positives[i].order));
    rng_.shuffle(std::span(state_.negatives[i].order));
  }
  state_.rng = rng_.state();
}

void PairSampler::require_nonempty(int attribute) const {
  if (attribute < 0 || attribute >= static_cast<int>(names_.size()))
    throw IndexError("attribute index " + std::to_string(attribute) + " out of range [0, " +
                     std::to_string(names_.size()) + ")");
  if (state_.positives[attribute].order.empty())
    throw DatasetError("attribute '" + names_[attribute] + "' has no positive examples");
  if (state_.negatives[attribute].order.empty())
    throw DatasetError("attribute '" + names_[attribute] + "' has no negative examples");
}

std::vector<std::size_t> PairSampler::draw(SamplerState::Pool& pool, int count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    if (pool.cursor == pool.order.size()) {
      rng_.shuffle(std::span(pool.order));
      pool.cursor = 0;
    }
    out.push_back(pool.order[pool.cursor++]);
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> PairSampler::sample(int attribute, int batch_size) {
  require_nonempty(attribute);
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  rng_.set_state(state_.rng);
  auto a = draw(state_.positives[attribute], batch_size);
  auto b = draw(state_.negatives[attribute], batch_size);
  state_.rng = rng_.state();
  return {std::move(a), std::move(b)};
}

void PairSampler::restore(SamplerState state) {
  if (state.positives.size() != names_.size() || state.negatives.size() != names_.size())
    throw LoadError("sampler state has " + std::to_string(state.positives.size()) + " attributes, dataset has " +
                    std::to_string(names_.size()));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto check = [&](const SamplerState::Pool& saved, const SamplerState::Pool& current) {
      auto a = saved.order, b = current.order;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b || saved.cursor > saved.order.size())
        throw LoadError("sampler state does not match the dataset for attribute '" + names_[i] + "'");
    };
    check(state.positives[i], state_.positives[i]);
    check(state.negatives[i], state_.negatives[i]);
  }
  state_ = std::move(state);
  rng_.set_state(state_.rng);
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
