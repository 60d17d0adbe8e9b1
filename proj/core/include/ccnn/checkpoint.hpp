#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

struct Checkpoint {
  ModelParams params;
  CCNNConfig config;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "CCN1", u32 version, u32 length + canonical config JSON, then each
/// layer's weights and bias as little-endian f32 in ModelParams order.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const CCNNConfig& config);

/// Throws CheckpointError with kind bad_magic, bad_version, truncated or
/// manifest_mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& params, const CCNNConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccnn
