#pragma once

#include <cstddef>
#include <vector>

#include "ctxscale/numerics/tensor.hpp"

namespace ctxscale::numerics {

/// Post-softmax attention weights of one sample at one layer, laid out as
/// (heads, queries, keys). Rows are probability distributions over keys.
struct AttentionMap {
  std::size_t layer_index = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<double> weights;

  double at(std::size_t head, std::size_t query, std::size_t key) const {
    return weights[(head * queries + query) * keys + key];
  }
  std::size_t rows() const { return heads * queries; }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;
  /// One map per leading batch element when recording was requested.
  std::vector<AttentionMap> maps;
};

struct AttentionOptions {
  bool record = false;
  bool causal = false;
  /// Extra divisor on the scores; +inf forces uniform weights.
  double temperature = 1.0;
  std::size_t layer_index = 0;
};

/// softmax(q kᵀ / √d) v over the last two axes.
///
/// q is (..., heads, queries, d) and k, v are (..., heads, keys, d). Rank 3
/// inputs are one sample; rank 4 inputs carry a leading batch axis.
template <typename T>
AttentionOutput<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const AttentionOptions& options = {});

}  // namespace ctxscale::numerics
