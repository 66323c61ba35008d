#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "ctxscale/errors.hpp"

namespace ctxscale::models {

enum class ModelKind { kVanilla, kPatchTST, kRaft };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Encoder-decoder Transformer.
struct VanillaConfig {
  std::size_t d_model = 512;
  std::size_t n_heads = 8;
  std::size_t e_layers = 2;
  std::size_t d_layers = 1;
  std::size_t d_ff = 2048;
  double dropout = 0.1;
  std::size_t lookback = 720;
  std::size_t label_len = 48;
  std::size_t horizon = 96;
  std::size_t channels = 7;
  double layer_norm_eps = 1e-5;

  void validate() const;
};

/// Channel-independent patch Transformer.
struct PatchConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 16;
  std::size_t e_layers = 3;
  std::size_t d_ff = 256;
  double dropout = 0.1;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t lookback = 720;
  std::size_t horizon = 96;
  std::size_t channels = 7;
  bool instance_norm = true;
  double layer_norm_eps = 1e-5;
  /// Variance floor inside instance normalization.
  double instance_eps = 1e-5;

  std::size_t patch_count() const;
  void validate() const;
};

/// Patch encoder plus retrieved-future fusion.
struct RaftConfig {
  PatchConfig base = default_base();
  std::size_t top_k = 5;
  double temperature = 0.1;
  /// Retrieval key length m; 0 means the full lookback.
  std::size_t retrieval_window = 0;
  std::size_t retrieval_stride = 1;
  bool channel_independent = false;

  std::size_t key_length() const { return retrieval_window == 0 ? base.lookback : retrieval_window; }
  void validate() const;

  static PatchConfig default_base() {
    PatchConfig p;
    p.n_heads = 8;
    p.e_layers = 2;
    return p;
  }
};

struct ModelConfig {
  ModelKind kind = ModelKind::kPatchTST;
  VanillaConfig vanilla;
  PatchConfig patch;
  RaftConfig raft;

  std::size_t lookback() const;
  std::size_t horizon() const;
  std::size_t channels() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const VanillaConfig& c);
void from_json(const nlohmann::json& j, VanillaConfig& c);
void to_json(nlohmann::json& j, const PatchConfig& c);
void from_json(const nlohmann::json& j, PatchConfig& c);
void to_json(nlohmann::json& j, const RaftConfig& c);
void from_json(const nlohmann::json& j, RaftConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace ctxscale::models
