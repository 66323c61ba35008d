#include "ctxscale/models/config.hpp"

#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::models {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kVanilla:
      return "vanilla";
    case ModelKind::kPatchTST:
      return "patchtst";
    case ModelKind::kRaft:
      return "raft";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "vanilla" || name == "transformer") return ModelKind::kVanilla;
  if (name == "patchtst") return ModelKind::kPatchTST;
  if (name == "raft") return ModelKind::kRaft;
  throw ConfigError("unknown model '" + name + "' (expected vanilla, patchtst or raft)");
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void VanillaConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
          "d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  require(e_layers >= 1, "vanilla model needs e_layers >= 1");
  require(d_layers >= 1, "vanilla model needs d_layers >= 1");
  require(d_ff > 0, "d_ff must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(lookback > 0 && horizon > 0 && channels > 0, "seq_len, pred_len and channels must be positive");
  require(label_len <= lookback,
          "label_len " + std::to_string(label_len) + " exceeds seq_len " + std::to_string(lookback));
}

std::size_t PatchConfig::patch_count() const {
  try {
    return numerics::patch_count(lookback, patch_len, stride);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

void PatchConfig::validate() const {
  require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
          "d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  require(e_layers >= 1, "patch model needs e_layers >= 1");
  require(d_ff > 0, "d_ff must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(stride > 0 && patch_len >= stride,
          "patch_len " + std::to_string(patch_len) + " must be >= stride " + std::to_string(stride));
  require(lookback >= patch_len, "seq_len " + std::to_string(lookback) + " is shorter than patch_len");
  require(horizon > 0 && channels > 0, "pred_len and channels must be positive");
  patch_count();
}

void RaftConfig::validate() const {
  base.validate();
  require(top_k >= 1, "top_k must be >= 1");
  require(temperature > 0.0, "retrieval temperature must be positive");
  require(key_length() >= 2 && key_length() <= base.lookback,
          "retrieval window must lie in [2, seq_len], got " + std::to_string(key_length()));
  require(retrieval_stride >= 1, "retrieval stride must be >= 1");
}

std::size_t ModelConfig::lookback() const {
  switch (kind) {
    case ModelKind::kVanilla:
      return vanilla.lookback;
    case ModelKind::kPatchTST:
      return patch.lookback;
    case ModelKind::kRaft:
      return raft.base.lookback;
  }
  return 0;
}

std::size_t ModelConfig::horizon() const {
  switch (kind) {
    case ModelKind::kVanilla:
      return vanilla.horizon;
    case ModelKind::kPatchTST:
      return patch.horizon;
    case ModelKind::kRaft:
      return raft.base.horizon;
  }
  return 0;
}

std::size_t ModelConfig::channels() const {
  switch (kind) {
    case ModelKind::kVanilla:
      return vanilla.channels;
    case ModelKind::kPatchTST:
      return patch.channels;
    case ModelKind::kRaft:
      return raft.base.channels;
  }
  return 0;
}

void ModelConfig::validate() const {
  switch (kind) {
    case ModelKind::kVanilla:
      vanilla.validate();
      break;
    case ModelKind::kPatchTST:
      patch.validate();
      break;
    case ModelKind::kRaft:
      raft.validate();
      break;
  }
}

using nlohmann::json;

void to_json(json& j, const VanillaConfig& c) {
  j = json{{"d_model", c.d_model},   {"n_heads", c.n_heads},     {"e_layers", c.e_layers},
           {"d_layers", c.d_layers}, {"d_ff", c.d_ff},           {"dropout", c.dropout},
           {"seq_len", c.lookback},  {"label_len", c.label_len}, {"pred_len", c.horizon},
           {"channels", c.channels}, {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const json& j, VanillaConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.e_layers = j.value("e_layers", c.e_layers);
  c.d_layers = j.value("d_layers", c.d_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.lookback = j.value("seq_len", c.lookback);
  c.label_len = j.value("label_len", c.label_len);
  c.horizon = j.value("pred_len", c.horizon);
  c.channels = j.value("channels", c.channels);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
}

void to_json(json& j, const PatchConfig& c) {
  j = json{{"d_model", c.d_model},     {"n_heads", c.n_heads},
           {"e_layers", c.e_layers},   {"d_ff", c.d_ff},
           {"dropout", c.dropout},     {"patch_len", c.patch_len},
           {"stride", c.stride},       {"seq_len", c.lookback},
           {"pred_len", c.horizon},    {"channels", c.channels},
           {"revin", c.instance_norm}, {"layer_norm_eps", c.layer_norm_eps},
           {"revin_eps", c.instance_eps}};
}

void from_json(const json& j, PatchConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.e_layers = j.value("e_layers", c.e_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.dropout = j.value("dropout", c.dropout);
  c.patch_len = j.value("patch_len", c.patch_len);
  c.stride = j.value("stride", c.stride);
  c.lookback = j.value("seq_len", c.lookback);
  c.horizon = j.value("pred_len", c.horizon);
  c.channels = j.value("channels", c.channels);
  c.instance_norm = j.value("revin", c.instance_norm);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.instance_eps = j.value("revin_eps", c.instance_eps);
}

void to_json(json& j, const RaftConfig& c) {
  j = json{{"base", c.base},
           {"top_k", c.top_k},
           {"temperature", c.temperature},
           {"retrieval_window", c.retrieval_window},
           {"retrieval_stride", c.retrieval_stride},
           {"channel_independent_retrieval", c.channel_independent}};
}

void from_json(const json& j, RaftConfig& c) {
  if (j.contains("base")) c.base = j.at("base").get<PatchConfig>();
  c.top_k = j.value("top_k", c.top_k);
  c.temperature = j.value("temperature", c.temperature);
  c.retrieval_window = j.value("retrieval_window", c.retrieval_window);
  c.retrieval_stride = j.value("retrieval_stride", c.retrieval_stride);
  c.channel_independent = j.value("channel_independent_retrieval", c.channel_independent);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"model", to_string(c.kind)}};
  switch (c.kind) {
    case ModelKind::kVanilla:
      j["config"] = c.vanilla;
      break;
    case ModelKind::kPatchTST:
      j["config"] = c.patch;
      break;
    case ModelKind::kRaft:
      j["config"] = c.raft;
      break;
  }
}

void from_json(const json& j, ModelConfig& c) {
  c.kind = parse_model_kind(j.at("model").get<std::string>());
  const auto& body = j.at("config");
  switch (c.kind) {
    case ModelKind::kVanilla:
      c.vanilla = body.get<VanillaConfig>();
      break;
    case ModelKind::kPatchTST:
      c.patch = body.get<PatchConfig>();
      break;
    case ModelKind::kRaft:
      c.raft = body.get<RaftConfig>();
      break;
  }
}

}  // namespace ctxscale::models
