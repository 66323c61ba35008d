#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ctxscale/data/dataset.hpp"
#include "ctxscale/models/config.hpp"
#include "ctxscale/numerics/attention.hpp"
#include "ctxscale/numerics/random.hpp"
#include "ctxscale/numerics/tensor.hpp"
#include "ctxscale/retrieval/index.hpp"

namespace ctxscale::models {

using numerics::AttentionMap;
using numerics::Rng;
using numerics::Tensor;

/// Named trainable tensors in registration order.
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

  void zero_grad();
  /// Flat copy of every value, registration order.
  std::vector<T> snapshot() const;
  void restore(const std::vector<T>& flat);

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

using Batch = std::vector<const data::WindowSample*>;

struct ForwardOptions {
  bool training = false;
  bool record = false;
  /// Extra divisor on attention scores; +inf forces uniform attention.
  double attention_temperature = 1.0;
};

template <typename T>
struct ForwardResult {
  /// (B, H, C), standardized units.
  Tensor<T> forecast;
  std::vector<AttentionMap> maps;
};

template <typename T>
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual ModelKind kind() const = 0;
  const ModelConfig& config() const { return config_; }
  std::size_t lookback() const { return config_.lookback(); }
  std::size_t horizon() const { return config_.horizon(); }
  std::size_t channels() const { return config_.channels(); }

  virtual ForwardResult<T> forward(const Batch& batch, const ForwardOptions& options) = 0;
  /// Whether forward can emit attention maps.
  virtual bool records_attention() const { return true; }

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  /// Reseeds the dropout stream.
  void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

 protected:
  Forecaster(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {}
  void check_batch(const Batch& batch) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  Rng dropout_rng_;
};

/// Input tensors for a batch of windows.
template <typename T>
Tensor<T> stack_lookbacks(const Batch& batch);
template <typename T>
Tensor<T> stack_targets(const Batch& batch);

template <typename T>
class VanillaTransformer;
template <typename T>
class PatchTST;
template <typename T>
class Raft;

/// Builds a freshly initialized model. RAFT needs a retrieval index.
template <typename T>
std::unique_ptr<Forecaster<T>> make_forecaster(const ModelConfig& config, std::uint64_t seed,
                                               std::shared_ptr<const retrieval::RetrievalIndex> index = nullptr);

}  // namespace ctxscale::models
