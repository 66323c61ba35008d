#pragma once

#include <filesystem>

#include <json.hpp>

#include "ctxscale/models/forecaster.hpp"

namespace ctxscale::models {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything in a checkpoint except the tensor payload.
struct CheckpointInfo {
  std::uint32_t version = 0;
  /// 4 or 8.
  std::uint32_t scalar_bytes = 0;
  ModelConfig config;
  /// Caller-supplied metadata (dataset, seed, ...).
  nlohmann::json extra;
};

/// Layout: magic "CTXSCKPT", u32 version, u32 scalar bytes, u64 length +
/// JSON header, u64 tensor count, then per tensor u64 name length, name,
/// u64 rank, u64 dims, row-major values.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Forecaster<T>& model,
                     const nlohmann::json& extra = nlohmann::json::object());

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Copies stored tensors into the model's parameters by name, converting
/// precision if needed. Names and shapes must match exactly.
template <typename T>
void load_parameters(const std::filesystem::path& path, Forecaster<T>& model);

}  // namespace ctxscale::models
