#include "ctxscale/models/forecaster.hpp"

#include "ctxscale/models/architectures.hpp"

namespace ctxscale::models {

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
  return entries_.back().second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  return const_cast<ParameterSet<T>*>(this)->get(name);
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : entries_) total += t.numel();
  return total;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

template <typename T>
std::vector<T> ParameterSet<T>::snapshot() const {
  std::vector<T> flat;
  flat.reserve(scalar_count());
  for (const auto& [n, t] : entries_) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

template <typename T>
void ParameterSet<T>::restore(const std::vector<T>& flat) {
  if (flat.size() != scalar_count()) {
    throw DimensionError("parameter snapshot has " + std::to_string(flat.size()) + " values, model has " +
                         std::to_string(scalar_count()));
  }
  std::size_t offset = 0;
  for (auto& [n, t] : entries_) {
    auto dst = t.mutable_values();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + dst.size()), dst.begin());
    offset += dst.size();
  }
}

template <typename T>
void Forecaster<T>::check_batch(const Batch& batch) const {
  if (batch.empty()) throw ContractError("forward on an empty batch");
  for (const auto* s : batch) {
    if (s->lookback_length() != lookback() || s->horizon() != horizon() || s->channels() != channels()) {
      throw DimensionError("window (L=" + std::to_string(s->lookback_length()) + ", H=" +
                           std::to_string(s->horizon()) + ", C=" + std::to_string(s->channels()) +
                           ") does not match model (L=" + std::to_string(lookback()) + ", H=" +
                           std::to_string(horizon()) + ", C=" + std::to_string(channels()) + ")");
    }
  }
}

namespace {

template <typename T, typename ViewOf>
Tensor<T> stack(const Batch& batch, std::size_t rows, ViewOf view_of) {
  const std::size_t c = batch.front()->channels();
  std::vector<T> out;
  out.reserve(batch.size() * rows * c);
  for (const auto* s : batch) {
    auto v = view_of(*s);
    for (double x : v.data) out.push_back(static_cast<T>(x));
  }
  return Tensor<T>({batch.size(), rows, c}, std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> stack_lookbacks(const Batch& batch) {
  return stack<T>(batch, batch.front()->lookback_length(), [](const data::WindowSample& s) { return s.lookback(); });
}

template <typename T>
Tensor<T> stack_targets(const Batch& batch) {
  return stack<T>(batch, batch.front()->horizon(), [](const data::WindowSample& s) { return s.target(); });
}

template <typename T>
std::unique_ptr<Forecaster<T>> make_forecaster(const ModelConfig& config, std::uint64_t seed,
                                               std::shared_ptr<const retrieval::RetrievalIndex> index) {
  config.validate();
  switch (config.kind) {
    case ModelKind::kVanilla:
      return std::make_unique<VanillaTransformer<T>>(config.vanilla, seed);
    case ModelKind::kPatchTST:
      return std::make_unique<PatchTST<T>>(config.patch, seed);
    case ModelKind::kRaft:
      if (!index) throw ConfigError("raft model needs a retrieval index");
      return std::make_unique<Raft<T>>(config.raft, seed, std::move(index));
  }
  throw ConfigError("unknown model kind");
}

#define CTXSCALE_INSTANTIATE_FORECASTER(T)                                                          \
  template class ParameterSet<T>;                                                                   \
  template class Forecaster<T>;                                                                     \
  template Tensor<T> stack_lookbacks<T>(const Batch&);                                              \
  template Tensor<T> stack_targets<T>(const Batch&);                                                \
  template std::unique_ptr<Forecaster<T>> make_forecaster<T>(const ModelConfig&, std::uint64_t, \
                                                             std::shared_ptr<const retrieval::RetrievalIndex>);

CTXSCALE_INSTANTIATE_FORECASTER(float)
CTXSCALE_INSTANTIATE_FORECASTER(double)

}  // namespace ctxscale::models
