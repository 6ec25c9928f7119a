#pragma once

// Flat YAML run configuration. Keys:
//
//   data_dir         dataset root (holds images/ and list_attr.txt)
//   image_dir        defaults to <data_dir>/images
//   attr_file        defaults to <data_dir>/list_attr.txt
//   attributes       comma list or YAML list; defaults to every column
//   out_dir          run output directory
//   seed             seeds initialisation and sampling
//   image_size, depth, base_channels, latent_channels, leaky_slope
//   learning_rate, adam_beta1, adam_beta2, adam_epsilon, batch_size,
//   total_steps, recon_weight, adv_weight, log_clamp_eps, checkpoint_every
//
// n_attributes is not a key; it follows from the attribute list.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "elegant/model.hpp"
#include "elegant/training.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string image_dir;
  std::string attr_file;
  std::vector<std::string> attributes;
  std::string out_dir = "run";

  std::filesystem::path resolved_image_dir() const;
  std::filesystem::path resolved_attr_file() const;

  // Sets one key from its textual value; ConfigError names unknown keys and bad values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_yaml() const;
};

RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace ELEGANT_ABI
}  // namespace elegant
