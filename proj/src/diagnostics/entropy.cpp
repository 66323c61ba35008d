#include "ctxscale/diagnostics/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "ctxscale/errors.hpp"

namespace ctxscale::diagnostics {

namespace {

constexpr double kRowSumTolerance = 1e-6;

void check_map(const AttentionMap& map) {
  if (map.keys < 2) throw ContractError("attention entropy needs at least 2 keys, got " + std::to_string(map.keys));
  if (map.weights.size() != map.rows() * map.keys) {
    throw DimensionError("attention map holds " + std::to_string(map.weights.size()) + " weights, expected " +
                         std::to_string(map.rows() * map.keys));
  }
}

// Unnormalized entropy of row r.
double row_entropy(const AttentionMap& map, std::size_t r) {
  const double* p = map.weights.data() + r * map.keys;
  double total = 0.0, h = 0.0;
  for (std::size_t j = 0; j < map.keys; ++j) {
    if (!(p[j] >= 0.0)) throw ContractError("attention row " + std::to_string(r) + " has a negative or NaN weight");
    total += p[j];
    if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
  }
  if (std::abs(total - 1.0) > kRowSumTolerance) {
    throw ContractError("attention row " + std::to_string(r) + " sums to " + std::to_string(total));
  }
  return h;
}

}  // namespace

std::vector<double> attention_entropy(const AttentionMap& map) {
  check_map(map);
  const double norm = std::log(static_cast<double>(map.keys));
  std::vector<double> out(map.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = row_entropy(map, r) / norm;
  return out;
}

std::vector<double> effective_rank(const AttentionMap& map) {
  check_map(map);
  std::vector<double> out(map.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::exp(row_entropy(map, r));
  return out;
}

void to_json(nlohmann::json& j, const AttentionStats& s) {
  j = nlohmann::json{{"entropy", s.entropy},
                     {"effective_rank", s.effective_rank},
                     {"keys", s.keys},
                     {"context_length", s.context_length},
                     {"samples", s.samples},
                     {"layers", nlohmann::json::array()}};
  for (const auto& l : s.layers) {
    j["layers"].push_back({{"layer", l.layer_index},
                           {"head_entropy", l.head_entropy},
                           {"entropy", l.entropy},
                           {"effective_rank", l.effective_rank}});
  }
}

void from_json(const nlohmann::json& j, AttentionStats& s) {
  s.entropy = j.at("entropy").get<double>();
  s.effective_rank = j.at("effective_rank").get<double>();
  s.keys = j.at("keys").get<std::size_t>();
  s.context_length = j.at("context_length").get<std::size_t>();
  s.samples = j.at("samples").get<std::size_t>();
  s.layers.clear();
  for (const auto& l : j.at("layers")) {
    LayerStats ls;
    ls.layer_index = l.at("layer").get<std::size_t>();
    ls.head_entropy = l.at("head_entropy").get<std::vector<double>>();
    ls.entropy = l.at("entropy").get<double>();
    ls.effective_rank = l.at("effective_rank").get<double>();
    s.layers.push_back(std::move(ls));
  }
}

namespace {

class StatsAccumulator {
 public:
  void add(const AttentionMap& map) {
    if (keys_ == 0) keys_ = map.keys;
    if (map.keys != keys_) {
      throw DimensionError("attention maps disagree on key count: " + std::to_string(map.keys) + " vs " +
                           std::to_string(keys_));
    }
    auto ent = attention_entropy(map);
    auto rank = effective_rank(map);
    auto& acc = by_layer_[map.layer_index];
    if (acc.head_sum.size() < map.heads) {
      acc.head_sum.resize(map.heads, 0.0);
      acc.head_rows.resize(map.heads, 0);
    }
    for (std::size_t h = 0; h < map.heads; ++h) {
      for (std::size_t q = 0; q < map.queries; ++q) {
        const std::size_t r = h * map.queries + q;
        acc.head_sum[h] += ent[r];
        acc.head_rows[h] += 1;
        acc.rank_sum += rank[r];
        acc.rows += 1;
      }
    }
  }

  AttentionStats finish(std::size_t context_length, std::size_t samples) const {
    if (by_layer_.empty()) throw ContractError("no attention maps to summarize");
    AttentionStats stats;
    stats.keys = keys_;
    stats.context_length = context_length;
    stats.samples = samples;
    for (const auto& [layer, acc] : by_layer_) {
      LayerStats ls;
      ls.layer_index = layer;
      for (std::size_t h = 0; h < acc.head_sum.size(); ++h) {
        ls.head_entropy.push_back(acc.head_rows[h] ? acc.head_sum[h] / static_cast<double>(acc.head_rows[h]) : 0.0);
      }
      double total = 0.0;
      for (double e : ls.head_entropy) total += e;
      ls.entropy = total / static_cast<double>(ls.head_entropy.size());
      ls.effective_rank = acc.rank_sum / static_cast<double>(acc.rows);
      stats.entropy += ls.entropy;
      stats.effective_rank += ls.effective_rank;
      stats.layers.push_back(std::move(ls));
    }
    stats.entropy /= static_cast<double>(stats.layers.size());
    stats.effective_rank /= static_cast<double>(stats.layers.size());
    return stats;
  }

 private:
  struct Acc {
    std::vector<double> head_sum;
    std::vector<std::size_t> head_rows;
    double rank_sum = 0.0;
    std::size_t rows = 0;
  };
  std::map<std::size_t, Acc> by_layer_;
  std::size_t keys_ = 0;
};

}  // namespace

AttentionStats summarize(const std::vector<AttentionMap>& maps, std::size_t context_length, std::size_t samples) {
  StatsAccumulator acc;
  for (const auto& m : maps) acc.add(m);
  return acc.finish(context_length, samples);
}

template <typename T>
AttentionStats probe(models::Forecaster<T>& model, const std::vector<data::WindowSample>& windows,
                     std::size_t lookback, std::size_t max_samples, double temperature, std::size_t batch_size) {
  if (!model.records_attention()) throw ContractError("model has no recordable attention");
  if (model.lookback() != lookback) {
    throw ConfigError("probe lookback " + std::to_string(lookback) + " does not match model lookback " +
                      std::to_string(model.lookback()));
  }
  if (windows.empty()) throw ContractError("probe needs at least one window");
  if (max_samples == 0 || batch_size == 0) throw ConfigError("probe needs positive sample and batch counts");
  const std::size_t n = std::min(max_samples, windows.size());
  models::Batch picked;
  for (std::size_t i = 0; i < n; ++i) picked.push_back(&windows[i * windows.size() / n]);

  numerics::NoGradGuard guard;
  models::ForwardOptions options;
  options.record = true;
  options.attention_temperature = temperature;
  StatsAccumulator acc;
  for (std::size_t first = 0; first < picked.size(); first += batch_size) {
    models::Batch batch(picked.begin() + static_cast<std::ptrdiff_t>(first),
                        picked.begin() + static_cast<std::ptrdiff_t>(std::min(first + batch_size, picked.size())));
    auto result = model.forward(batch, options);
    for (const auto& m : result.maps) acc.add(m);
  }
  return acc.finish(lookback, n);
}

template AttentionStats probe(models::Forecaster<float>&, const std::vector<data::WindowSample>&, std::size_t,
                              std::size_t, double, std::size_t);
template AttentionStats probe(models::Forecaster<double>&, const std::vector<data::WindowSample>&, std::size_t,
                              std::size_t, double, std::size_t);

}  // namespace ctxscale::diagnostics
