#pragma once

// Single-file weights container: 8-byte magic, u32 format version, u64 header
// length, a JSON header (config, vocabulary, tensor table) and the float32
// little-endian payload in table order.

#include "dqen/model.hpp"

#include <filesystem>
#include <memory>

namespace dqen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const DqenModel& model, const nlohmann::json& extra = {});

struct LoadedCheckpoint {
  std::unique_ptr<DqenModel> model;
  nlohmann::json extra;
};

// Rebuilds the model from the stored config and vocabulary and loads every
// tensor; missing, unexpected or misshaped tensors are errors.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dqen
