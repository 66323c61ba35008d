#include "ctxscale/models/architectures.hpp"
#include "layers.hpp"

namespace ctxscale::models {

template <typename T>
PatchTST<T>::PatchTST(const PatchConfig& config, std::uint64_t seed)
    : Forecaster<T>(ModelConfig{ModelKind::kPatchTST, {}, config, {}}, seed) {
  config.validate();
  Rng rng(seed);
  backbone_ = std::make_unique<detail::PatchBackbone<T>>(this->params_, config, 1, 0, rng);
}

template <typename T>
PatchTST<T>::~PatchTST() = default;

template <typename T>
ForwardResult<T> PatchTST<T>::forward(const Batch& batch, const ForwardOptions& options) {
  this->check_batch(batch);
  const auto& cfg = this->config_.patch;
  ForwardResult<T> result;
  detail::Pass pass{options.training, cfg.dropout, &this->dropout_rng_, options.attention_temperature,
                    options.record ? &result.maps : nullptr};
  auto rows = detail::channels_to_rows(stack_lookbacks<T>(batch));
  Tensor<T> out;
  if (cfg.instance_norm) {
    auto stats = detail::InstanceStats<T>::of(rows, cfg.instance_eps);
    out = stats.denormalize((*backbone_)({stats.normalize(rows)}, Tensor<T>(), pass));
  } else {
    out = (*backbone_)({rows}, Tensor<T>(), pass);
  }
  result.forecast = detail::rows_to_channels(out, batch.size(), cfg.channels);
  return result;
}

template class PatchTST<float>;
template class PatchTST<double>;

}  // namespace ctxscale::models
