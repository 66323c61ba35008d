#include <cmath>
#include <map>

#include "ctxscale/models/architectures.hpp"
#include "layers.hpp"

namespace ctxscale::models {

namespace detail {

template <typename T>
struct VanillaLayers {
  Linear<T> encoder_embed;
  Linear<T> decoder_embed;
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;
  Linear<T> projection;
  std::map<std::size_t, Tensor<T>> positions;

  // Sinusoidal table, (length, d).
  const Tensor<T>& position(std::size_t length, std::size_t d) {
    auto it = positions.find(length);
    if (it != positions.end()) return it->second;
    std::vector<T> table(length * d);
    for (std::size_t pos = 0; pos < length; ++pos) {
      for (std::size_t i = 0; i < d; i += 2) {
        const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d);
        table[pos * d + i] = static_cast<T>(std::sin(angle));
        if (i + 1 < d) table[pos * d + i + 1] = static_cast<T>(std::cos(angle));
      }
    }
    return positions.emplace(length, Tensor<T>({length, d}, std::move(table))).first->second;
  }
};

}  // namespace detail

template <typename T>
VanillaTransformer<T>::VanillaTransformer(const VanillaConfig& config, std::uint64_t seed)
    : Forecaster<T>(ModelConfig{ModelKind::kVanilla, config, {}, {}}, seed),
      layers_(std::make_unique<detail::VanillaLayers<T>>()) {
  config.validate();
  Rng rng(seed);
  auto& p = this->params_;
  auto& l = *layers_;
  l.encoder_embed = detail::Linear<T>(p, "encoder_embed", config.channels, config.d_model, rng);
  l.decoder_embed = detail::Linear<T>(p, "decoder_embed", config.channels, config.d_model, rng);
  for (std::size_t i = 0; i < config.e_layers; ++i) {
    l.encoder.emplace_back(p, "encoder." + std::to_string(i), config.d_model, config.n_heads, config.d_ff,
                           config.layer_norm_eps, i, rng);
  }
  for (std::size_t i = 0; i < config.d_layers; ++i) {
    l.decoder.emplace_back(p, "decoder." + std::to_string(i), config.d_model, config.n_heads, config.d_ff,
                           config.layer_norm_eps, rng);
  }
  l.projection = detail::Linear<T>(p, "projection", config.d_model, config.channels, rng);
}

template <typename T>
VanillaTransformer<T>::~VanillaTransformer() = default;

template <typename T>
ForwardResult<T> VanillaTransformer<T>::forward(const Batch& batch, const ForwardOptions& options) {
  this->check_batch(batch);
  const auto& cfg = this->config_.vanilla;
  auto& l = *layers_;
  ForwardResult<T> result;
  detail::Pass pass{options.training, cfg.dropout, &this->dropout_rng_, options.attention_temperature,
                    options.record ? &result.maps : nullptr};

  const std::size_t b = batch.size();
  const std::size_t c = cfg.channels;
  const std::size_t dec_len = cfg.label_len + cfg.horizon;
  auto x = stack_lookbacks<T>(batch);

  // Known tail of the lookback, then zeros where the forecast goes.
  std::vector<T> dec(b * dec_len * c, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    auto lb = batch[i]->lookback();
    for (std::size_t r = 0; r < cfg.label_len; ++r) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        dec[(i * dec_len + r) * c + ch] = static_cast<T>(lb(cfg.lookback - cfg.label_len + r, ch));
      }
    }
  }
  Tensor<T> dec_in({b, dec_len, c}, std::move(dec));

  auto memory = detail::drop(numerics::add(l.encoder_embed(x), l.position(cfg.lookback, cfg.d_model)), pass);
  for (const auto& layer : l.encoder) memory = layer(memory, pass);
  auto h = detail::drop(numerics::add(l.decoder_embed(dec_in), l.position(dec_len, cfg.d_model)), pass);
  for (const auto& layer : l.decoder) h = layer(h, memory, pass);
  result.forecast = numerics::slice(l.projection(h), 1, cfg.label_len, dec_len);
  return result;
}

template class VanillaTransformer<float>;
template class VanillaTransformer<double>;

}  // namespace ctxscale::models
