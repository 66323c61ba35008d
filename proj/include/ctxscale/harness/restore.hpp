#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ctxscale/data/dataset.hpp"
#include "ctxscale/diagnostics/entropy.hpp"
#include "ctxscale/harness/manifest.hpp"
#include "ctxscale/training/trainer.hpp"

namespace ctxscale::harness {

/// Test-split (or other split) errors of a saved cell, recomputed from disk.
struct CheckpointEvaluation {
  std::string cell;
  std::string split;
  std::string precision;
  training::Evaluation eval;
  double persistence_mse = 0.0;
};

void to_json(nlohmann::json& j, const CheckpointEvaluation& e);

/// Rebuilds the model a cell checkpoint was written from, reloads its
/// dataset and evaluates on `split`. The stored precision is used unless
/// overridden.
CheckpointEvaluation evaluate_checkpoint(const std::filesystem::path& checkpoint, data::Split split = data::Split::kTest,
                                         std::optional<Precision> precision = std::nullopt);

diagnostics::AttentionStats probe_checkpoint(const std::filesystem::path& checkpoint,
                                             data::Split split = data::Split::kTest, std::size_t samples = 64,
                                             double temperature = 1.0,
                                             std::optional<Precision> precision = std::nullopt);

}  // namespace ctxscale::harness
