#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctxscale/models/forecaster.hpp"
#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::models::detail {

using numerics::AttentionOptions;
using numerics::Shape;

template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> v(numerics::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

// Per-forward state threaded through the blocks.
struct Pass {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
  double temperature = 1.0;
  std::vector<AttentionMap>* maps = nullptr;
};

template <typename T>
Tensor<T> drop(const Tensor<T>& x, const Pass& pass) {
  if (!pass.training || pass.dropout <= 0.0) return x;
  return numerics::dropout(x, pass.dropout, *pass.rng, true);
}

template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    weight = params.add(name + ".weight", glorot<T>({in, out}, in, out, rng));
    bias = params.add(name + ".bias", Tensor<T>({out}, std::vector<T>(out, T(0)), true));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return numerics::add(numerics::matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t d, double epsilon) : eps(T(epsilon)) {
    gamma = params.add(name + ".gamma", Tensor<T>({d}, std::vector<T>(d, T(1)), true));
    beta = params.add(name + ".beta", Tensor<T>({d}, std::vector<T>(d, T(0)), true));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return numerics::layer_norm(x, gamma, beta, eps); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  std::size_t heads = 1;
  std::size_t d_model = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<T>& params, const std::string& name, std::size_t d, std::size_t h, Rng& rng)
      : q(params, name + ".query", d, d, rng),
        k(params, name + ".key", d, d, rng),
        v(params, name + ".value", d, d, rng),
        o(params, name + ".out", d, d, rng),
        heads(h),
        d_model(d) {}

  // (B, L, d) -> (B, heads, L, d / heads)
  Tensor<T> split(const Tensor<T>& x) const {
    const auto& s = x.shape();
    return numerics::permute(numerics::reshape(x, {s[0], s[1], heads, d_model / heads}), {0, 2, 1, 3});
  }

  Tensor<T> operator()(const Tensor<T>& query_src, const Tensor<T>& key_src, const Pass& pass, bool causal,
                       std::size_t layer_index, bool record) const {
    AttentionOptions options;
    options.record = record && pass.maps != nullptr;
    options.causal = causal;
    options.temperature = pass.temperature;
    options.layer_index = layer_index;
    auto res = numerics::scaled_dot_attention(split(q(query_src)), split(k(key_src)), split(v(key_src)), options);
    if (options.record) {
      for (auto& m : res.maps) pass.maps->push_back(std::move(m));
    }
    const auto& s = query_src.shape();
    auto merged = numerics::reshape(numerics::permute(res.output, {0, 2, 1, 3}), {s[0], s[1], d_model});
    return o(merged);
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;

  FeedForward() = default;
  FeedForward(ParameterSet<T>& params, const std::string& name, std::size_t d, std::size_t d_ff, Rng& rng)
      : up(params, name + ".up", d, d_ff, rng), down(params, name + ".down", d_ff, d, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Pass& pass) const {
    return down(drop(numerics::gelu(up(x)), pass));
  }
};

// Post-norm encoder block.
template <typename T>
struct EncoderLayer {
  MultiHeadAttention<T> attention;
  LayerNorm<T> norm1, norm2;
  FeedForward<T> ff;
  std::size_t index = 0;

  EncoderLayer() = default;
  EncoderLayer(ParameterSet<T>& params, const std::string& name, std::size_t d, std::size_t h, std::size_t d_ff,
               double eps, std::size_t layer, Rng& rng)
      : attention(params, name + ".attention", d, h, rng),
        norm1(params, name + ".norm1", d, eps),
        norm2(params, name + ".norm2", d, eps),
        ff(params, name + ".ff", d, d_ff, rng),
        index(layer) {}

  Tensor<T> operator()(const Tensor<T>& x, const Pass& pass) const {
    auto h = norm1(numerics::add(x, drop(attention(x, x, pass, false, index, true), pass)));
    return norm2(numerics::add(h, drop(ff(h, pass), pass)));
  }
};

template <typename T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attention, cross_attention;
  LayerNorm<T> norm1, norm2, norm3;
  FeedForward<T> ff;

  DecoderLayer() = default;
  DecoderLayer(ParameterSet<T>& params, const std::string& name, std::size_t d, std::size_t h, std::size_t d_ff,
               double eps, Rng& rng)
      : self_attention(params, name + ".self_attention", d, h, rng),
        cross_attention(params, name + ".cross_attention", d, h, rng),
        norm1(params, name + ".norm1", d, eps),
        norm2(params, name + ".norm2", d, eps),
        norm3(params, name + ".norm3", d, eps),
        ff(params, name + ".ff", d, d_ff, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& memory, const Pass& pass) const {
    auto h = norm1(numerics::add(x, drop(self_attention(x, x, pass, true, 0, false), pass)));
    h = norm2(numerics::add(h, drop(cross_attention(h, memory, pass, false, 0, false), pass)));
    return norm3(numerics::add(h, drop(ff(h, pass), pass)));
  }
};

// Patch embedding, learned positions, encoder stack and flatten head.
template <typename T>
struct PatchBackbone {
  PatchConfig cfg;
  std::size_t features = 1;
  std::size_t head_extra = 0;
  Linear<T> embed;
  Tensor<T> position;
  std::vector<EncoderLayer<T>> layers;
  Linear<T> head;

  PatchBackbone() = default;
  PatchBackbone(ParameterSet<T>& params, const PatchConfig& config, std::size_t feature_count,
                std::size_t extra_head_inputs, Rng& rng)
      : cfg(config), features(feature_count), head_extra(extra_head_inputs) {
    const std::size_t n = cfg.patch_count();
    embed = Linear<T>(params, "embed", cfg.patch_len * features, cfg.d_model, rng);
    position = params.add("position", glorot<T>({n, cfg.d_model}, n, cfg.d_model, rng));
    for (std::size_t i = 0; i < cfg.e_layers; ++i) {
      layers.emplace_back(params, "encoder." + std::to_string(i), cfg.d_model, cfg.n_heads, cfg.d_ff,
                          cfg.layer_norm_eps, i, rng);
    }
    head = Linear<T>(params, "head", n * cfg.d_model + head_extra, cfg.horizon, rng);
  }

  // series: one (M, L) tensor per feature; extra: (M, head_extra) or undefined.
  Tensor<T> operator()(const std::vector<Tensor<T>>& series, const Tensor<T>& extra, const Pass& pass) const {
    std::vector<Tensor<T>> patches;
    for (const auto& s : series) patches.push_back(numerics::unfold_patches(s, cfg.patch_len, cfg.stride));
    auto p = patches.size() == 1 ? patches[0] : numerics::concat(patches, 2);
    auto h = drop(numerics::add(embed(p), position), pass);
    for (const auto& layer : layers) h = layer(h, pass);
    const std::size_t m = h.shape()[0];
    auto flat = numerics::reshape(h, {m, h.shape()[1] * cfg.d_model});
    if (head_extra > 0) flat = numerics::concat<T>({flat, extra}, 1);
    return head(flat);
  }
};

// Per-row instance statistics of an (M, L) tensor.
template <typename T>
struct InstanceStats {
  Tensor<T> mean;
  Tensor<T> std;

  static InstanceStats of(const Tensor<T>& x, double eps) {
    InstanceStats s;
    s.mean = numerics::mean(x, 1, true);
    auto var = numerics::mean(numerics::square(numerics::sub(x, s.mean)), 1, true);
    s.std = numerics::sqrt(numerics::affine(var, T(1), T(eps)));
    return s;
  }
  Tensor<T> normalize(const Tensor<T>& x) const { return numerics::div(numerics::sub(x, mean), std); }
  Tensor<T> denormalize(const Tensor<T>& x) const { return numerics::add(numerics::mul(x, std), mean); }
};

// (B, L, C) -> (B * C, L)
template <typename T>
Tensor<T> channels_to_rows(const Tensor<T>& x) {
  const auto& s = x.shape();
  return numerics::reshape(numerics::permute(x, {0, 2, 1}), {s[0] * s[2], s[1]});
}

// (B * C, H) -> (B, H, C)
template <typename T>
Tensor<T> rows_to_channels(const Tensor<T>& x, std::size_t batch, std::size_t channels) {
  return numerics::permute(numerics::reshape(x, {batch, channels, x.shape()[1]}), {0, 2, 1});
}

}  // namespace ctxscale::models::detail
