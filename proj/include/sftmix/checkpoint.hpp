#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sftmix/dense_array.hpp"
#include "sftmix/model.hpp"

namespace sftmix {

inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'T', 'M', 'I', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything needed to continue training bitwise: weights, optimizer moments,
// step counter and the state of the streaming rng.
struct CheckpointData {
  ModelConfig model;
  long step = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, DenseArray>> params;
  std::vector<std::pair<std::string, DenseArray>> adam_m;
  std::vector<std::pair<std::string, DenseArray>> adam_v;
};

// Binary layout: magic "SFTMIXCK", u32 format version, u64 header length,
// JSON header (model config, step, rng state, array manifest, payload
// checksum), then every array's doubles little-endian in manifest order.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace sftmix
