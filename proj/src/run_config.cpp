#include "elegant/run_config.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "elegant/error.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {
namespace {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t[]'\"");
    const auto e = item.find_last_not_of(" \t[]'\"");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

std::filesystem::path RunConfig::resolved_image_dir() const {
  return image_dir.empty() ? std::filesystem::path(data_dir) / "images" : std::filesystem::path(image_dir);
}

std::filesystem::path RunConfig::resolved_attr_file() const {
  return attr_file.empty() ? std::filesystem::path(data_dir) / "list_attr.txt" : std::filesystem::path(attr_file);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "data_dir") data_dir = value;
  else if (key == "image_dir") image_dir = value;
  else if (key == "attr_file") attr_file = value;
  else if (key == "out_dir") out_dir = value;
  else if (key == "attributes") attributes = split_list(value);
  else if (key == "seed") train.seed = parse_value<std::uint64_t>(key, value);
  else if (key == "image_size") model.image_size = parse_value<int>(key, value);
  else if (key == "depth") model.depth = parse_value<int>(key, value);
  else if (key == "base_channels") model.base_channels = parse_value<int>(key, value);
  else if (key == "latent_channels") model.latent_channels = parse_value<int>(key, value);
  else if (key == "leaky_slope") model.leaky_slope = parse_value<double>(key, value);
  else if (key == "learning_rate") train.learning_rate = parse_value<double>(key, value);
  else if (key == "adam_beta1") train.adam_beta1 = parse_value<double>(key, value);
  else if (key == "adam_beta2") train.adam_beta2 = parse_value<double>(key, value);
  else if (key == "adam_epsilon") train.adam_epsilon = parse_value<double>(key, value);
  else if (key == "batch_size") train.batch_size = parse_value<int>(key, value);
  else if (key == "total_steps") train.total_steps = parse_value<std::int64_t>(key, value);
  else if (key == "recon_weight") train.recon_weight = parse_value<double>(key, value);
  else if (key == "adv_weight") train.adv_weight = parse_value<double>(key, value);
  else if (key == "log_clamp_eps") train.log_clamp_eps = parse_value<double>(key, value);
  else if (key == "checkpoint_every") train.checkpoint_every = parse_value<std::int64_t>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (data_dir.empty() && (image_dir.empty() || attr_file.empty()))
    throw ConfigError("config key 'data_dir' is required (or both image_dir and attr_file)");
  if (out_dir.empty()) throw ConfigError("config key 'out_dir' must not be empty");
  train.validate();
}

std::string RunConfig::to_yaml() const {
  YAML::Emitter e;
  e << YAML::BeginMap;
  e << YAML::Key << "data_dir" << YAML::Value << data_dir;
  if (!image_dir.empty()) e << YAML::Key << "image_dir" << YAML::Value << image_dir;
  if (!attr_file.empty()) e << YAML::Key << "attr_file" << YAML::Value << attr_file;
  if (!attributes.empty()) e << YAML::Key << "attributes" << YAML::Value << YAML::Flow << attributes;
  e << YAML::Key << "out_dir" << YAML::Value << out_dir;
  e << YAML::Key << "seed" << YAML::Value << train.seed;
  e << YAML::Key << "image_size" << YAML::Value << model.image_size;
  e << YAML::Key << "depth" << YAML::Value << model.depth;
  e << YAML::Key << "base_channels" << YAML::Value << model.base_channels;
  e << YAML::Key << "latent_channels" << YAML::Value << model.latent_channels;
  e << YAML::Key << "leaky_slope" << YAML::Value << model.leaky_slope;
  e << YAML::Key << "learning_rate" << YAML::Value << train.learning_rate;
  e << YAML::Key << "adam_beta1" << YAML::Value << train.adam_beta1;
  e << YAML::Key << "adam_beta2" << YAML::Value << train.adam_beta2;
  e << YAML::Key << "adam_epsilon" << YAML::Value << train.adam_epsilon;
  e << YAML::Key << "batch_size" << YAML::Value << train.batch_size;
  e << YAML::Key << "total_steps" << YAML::Value << train.total_steps;
  e << YAML::Key << "recon_weight" << YAML::Value << train.recon_weight;
  e << YAML::Key << "adv_weight" << YAML::Value << train.adv_weight;
  e << YAML::Key << "log_clamp_eps" << YAML::Value << train.log_clamp_eps;
  e << YAML::Key << "checkpoint_every" << YAML::Value << train.checkpoint_every;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  RunConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping");
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    const YAML::Node& v = kv.second;
    if (v.IsSequence()) {
      if (key != "attributes") throw ConfigError("config key '" + key + "' must be a scalar");
      std::string joined;
      for (const auto& item : v) joined += (joined.empty() ? "" : ",") + item.as<std::string>();
      c.set(key, joined);
    } else if (v.IsScalar()) {
      c.set(key, v.as<std::string>());
    } else {
      throw ConfigError("config key '" + key + "' must be a scalar");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void write_run_config(const std::filesystem::path& path, const RunConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << config.to_yaml();
}

}  // namespace ELEGANT_ABI
}  // namespace elegant
