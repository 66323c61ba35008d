#pragma once

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "ctxscale/models/forecaster.hpp"
#include "ctxscale/numerics/attention.hpp"

namespace ctxscale::diagnostics {

using numerics::AttentionMap;

/// Per-row -sum p ln p / ln N, rows in (head, query) order.
std::vector<double> attention_entropy(const AttentionMap& map);

/// Per-row exp(-sum p ln p), the perplexity of each row.
std::vector<double> effective_rank(const AttentionMap& map);

struct LayerStats {
  std::size_t layer_index = 0;
  std::vector<double> head_entropy;
  double entropy = 0.0;
  double effective_rank = 0.0;
};

struct AttentionStats {
  std::vector<LayerStats> layers;
  double entropy = 0.0;
  double effective_rank = 0.0;
  /// Keys per attention row.
  std::size_t keys = 0;
  std::size_t context_length = 0;
  std::size_t samples = 0;
};

void to_json(nlohmann::json& j, const AttentionStats& s);
void from_json(const nlohmann::json& j, AttentionStats& s);

/// Folds recorded maps into stats. Maps sharing a layer index are averaged
/// together; heads, then layers, are weighted equally.
AttentionStats summarize(const std::vector<AttentionMap>& maps, std::size_t context_length, std::size_t samples);

/// Runs the model over up to `max_samples` evenly spaced windows with
/// attention recording on.
template <typename T>
AttentionStats probe(models::Forecaster<T>& model, const std::vector<data::WindowSample>& windows,
                     std::size_t lookback, std::size_t max_samples = 64, double temperature = 1.0,
                     std::size_t batch_size = 1);

}  // namespace ctxscale::diagnostics
