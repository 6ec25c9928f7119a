#pragma once

// Checkpoint directory layout:
//
//   manifest.json          {format_version, model_config, attribute_names,
//                           iteration, loss_history_path, checksums}
//   encoder.bin            tensor archives, one per network
//   decoder.bin
//   discriminator_1.bin
//   discriminator_2.bin
//   optimizer.bin          Adam moments, "<network>/<param>/m" and ".../v"
//   trainer_state.json     step counters, Adam steps, sampler state, train config
//
// Tensor archive, little-endian:
//   u32 tensor_count
//   per tensor: u32 name_len, name (utf-8), u8 dtype (0 = f32), u8 rank,
//               u32 dims[rank], f32 data[prod(dims)]

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "elegant/model.hpp"
#include "elegant/training.hpp"

namespace elegant {
inline namespace ELEGANT_ABI {

inline constexpr int kCheckpointFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_tensor_archive(const std::vector<std::pair<std::string, const Tensor*>>& tensors);
// Throws LoadError naming the tensor being read on truncation or bad dtype.
NamedTensors decode_tensor_archive(const std::string& bytes, const std::string& archive_name);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct CheckpointManifest {
  int format_version = kCheckpointFormatVersion;
  ModelConfig model_config;
  std::vector<std::string> attribute_names;
  std::int64_t iteration = 0;
  std::string loss_history_path;
  std::map<std::string, std::string> checksums;
};

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config,
                     const std::vector<std::string>& attribute_names, const std::string& loss_history_path);

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  TrainState state;
  TrainConfig train_config;
  std::string fingerprint;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Networks only (no optimizer or trainer state).
struct LoadedModel {
  CheckpointManifest manifest;
  Model model;
  std::string fingerprint;
};
LoadedModel load_model(const std::filesystem::path& dir);

// FNV-1a 64 over bytes, as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace ELEGANT_ABI
}  // namespace elegant
