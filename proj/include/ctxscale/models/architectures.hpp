#pragma once

#include <map>
#include <memory>

#include "ctxscale/models/forecaster.hpp"

namespace ctxscale::models {

namespace detail {
template <typename T>
struct VanillaLayers;
template <typename T>
struct PatchBackbone;
}  // namespace detail

/// Encoder over the lookback; decoder over label_len known rows plus H
/// zero placeholders. Records encoder self-attention.
template <typename T>
class VanillaTransformer final : public Forecaster<T> {
 public:
  VanillaTransformer(const VanillaConfig& config, std::uint64_t seed);
  ~VanillaTransformer() override;

  ModelKind kind() const override { return ModelKind::kVanilla; }
  ForwardResult<T> forward(const Batch& batch, const ForwardOptions& options) override;

 private:
  std::unique_ptr<detail::VanillaLayers<T>> layers_;
};

/// Channel-independent patch Transformer with shared weights across channels.
template <typename T>
class PatchTST final : public Forecaster<T> {
 public:
  PatchTST(const PatchConfig& config, std::uint64_t seed);
  ~PatchTST() override;

  ModelKind kind() const override { return ModelKind::kPatchTST; }
  ForwardResult<T> forward(const Batch& batch, const ForwardOptions& options) override;

 private:
  std::unique_ptr<detail::PatchBackbone<T>> backbone_;
};

/// Retrieved context for one window, standardized units.
struct RetrievalContext {
  bool found = false;
  /// L x C: query rows, with the last m replaced by the weighted retrieved windows.
  std::vector<double> window;
  /// H x C weighted retrieved futures.
  std::vector<double> future;
};

template <typename T>
struct RaftParts {
  Tensor<T> base;      // (B, H, C)
  Tensor<T> retrieved; // (B, H, C), constant
  Tensor<T> gate;      // (B, H, 1) effective gate
  ForwardResult<T> result;
};

/// Patch encoder fed with retrieved windows and futures, mixed with the
/// retrieved futures through a per-step sigmoid gate.
template <typename T>
class Raft final : public Forecaster<T> {
 public:
  Raft(const RaftConfig& config, std::uint64_t seed, std::shared_ptr<const retrieval::RetrievalIndex> index);
  ~Raft() override;

  ModelKind kind() const override { return ModelKind::kRaft; }
  ForwardResult<T> forward(const Batch& batch, const ForwardOptions& options) override;
  RaftParts<T> forward_parts(const Batch& batch, const ForwardOptions& options);

  /// Cached per window; retrieval never depends on parameters.
  const RetrievalContext& context_for(const data::WindowSample& sample);
  const retrieval::RetrievalIndex& index() const { return *index_; }
  /// Windows served by the base forecaster alone for lack of candidates.
  std::size_t fallback_count() const { return fallbacks_; }

 private:
  std::unique_ptr<detail::PatchBackbone<T>> backbone_;
  std::shared_ptr<const retrieval::RetrievalIndex> index_;
  std::map<const double*, RetrievalContext> cache_;
  // Keeps cached keys' buffers alive so addresses stay unique.
  std::vector<std::shared_ptr<const std::vector<double>>> cache_buffers_;
  std::size_t fallbacks_ = 0;
};

}  // namespace ctxscale::models
