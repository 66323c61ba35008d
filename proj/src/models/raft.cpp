#include <iostream>

#include "ctxscale/models/architectures.hpp"
#include "layers.hpp"

namespace ctxscale::models {

namespace {

// Per-channel means, accumulated the same way as the index statistics.
std::vector<double> column_means(const data::MatrixView& v) {
  std::vector<double> out(v.cols);
  for (std::size_t c = 0; c < v.cols; ++c) {
    long double total = 0;
    for (std::size_t t = 0; t < v.rows; ++t) total += v(t, c);
    out[c] = static_cast<double>(total / v.rows);
  }
  return out;
}

// Adds weight * (segment + level shift) for the selected channels.
void accumulate(const retrieval::RetrievedSet& set, const std::vector<double>& weights,
                const std::vector<double>& query_mean, std::size_t first_row, std::size_t only_channel,
                bool all_channels, std::vector<double>& window, std::vector<double>& future) {
  for (std::size_t j = 0; j < set.segments.size(); ++j) {
    const auto& seg = set.segments[j];
    const auto cand_mean = column_means(seg.window);
    const std::size_t c = seg.window.cols;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (!all_channels && ch != only_channel) continue;
      const double shift = query_mean[ch] - cand_mean[ch];
      for (std::size_t t = 0; t < seg.window.rows; ++t) {
        window[(first_row + t) * c + ch] += weights[j] * (seg.window(t, ch) + shift);
      }
      for (std::size_t t = 0; t < seg.future.rows; ++t) {
        future[t * c + ch] += weights[j] * (seg.future(t, ch) + shift);
      }
    }
  }
}

}  // namespace

template <typename T>
Raft<T>::Raft(const RaftConfig& config, std::uint64_t seed, std::shared_ptr<const retrieval::RetrievalIndex> index)
    : Forecaster<T>(ModelConfig{ModelKind::kRaft, {}, {}, config}, seed), index_(std::move(index)) {
  config.validate();
  if (!index_) throw ConfigError("raft model needs a retrieval index");
  if (index_->window_length() != config.key_length() || index_->horizon() != config.base.horizon ||
      index_->channels() != config.base.channels) {
    throw ConfigError("retrieval index (m=" + std::to_string(index_->window_length()) + ", H=" +
                      std::to_string(index_->horizon()) + ", C=" + std::to_string(index_->channels()) +
                      ") does not match model (m=" + std::to_string(config.key_length()) + ", H=" +
                      std::to_string(config.base.horizon) + ", C=" + std::to_string(config.base.channels) + ")");
  }
  Rng rng(seed);
  backbone_ = std::make_unique<detail::PatchBackbone<T>>(this->params_, config.base, 2, config.base.horizon, rng);
  this->params_.add("gate.logits", Tensor<T>({config.base.horizon}, std::vector<T>(config.base.horizon, T(0)), true));
}

template <typename T>
Raft<T>::~Raft() = default;

template <typename T>
const RetrievalContext& Raft<T>::context_for(const data::WindowSample& sample) {
  const double* key = sample.lookback().data.data();
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  const auto& cfg = this->config_.raft;
  const std::size_t l = cfg.base.lookback;
  const std::size_t h = cfg.base.horizon;
  const std::size_t c = cfg.base.channels;
  const std::size_t m = cfg.key_length();
  auto lookback = sample.lookback();
  data::MatrixView query{lookback.data.subspan((l - m) * c), m, c};
  const auto query_mean = column_means(query);

  RetrievalContext ctx;
  ctx.window.assign(lookback.data.begin(), lookback.data.end());
  ctx.future.assign(h * c, 0.0);
  retrieval::QueryOptions opts;
  opts.k = cfg.top_k;
  if (!cfg.channel_independent) {
    auto set = retrieval::cosine_topk(*index_, query, sample.origin_index(), opts);
    if (!set.empty()) {
      ctx.found = true;
      std::fill(ctx.window.begin() + static_cast<std::ptrdiff_t>((l - m) * c), ctx.window.end(), 0.0);
      accumulate(set, retrieval::similarity_weights(set, cfg.temperature), query_mean, l - m, 0, true, ctx.window,
                 ctx.future);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      opts.channel = ch;
      auto set = retrieval::cosine_topk(*index_, query, sample.origin_index(), opts);
      if (set.empty()) break;
      ctx.found = true;
      for (std::size_t t = l - m; t < l; ++t) ctx.window[t * c + ch] = 0.0;
      accumulate(set, retrieval::similarity_weights(set, cfg.temperature), query_mean, l - m, ch, false, ctx.window,
                 ctx.future);
    }
  }
  if (!ctx.found) {
    ctx.window.assign(lookback.data.begin(), lookback.data.end());
    for (std::size_t t = 0; t < h; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) ctx.future[t * c + ch] = query_mean[ch];
    }
    if (fallbacks_ == 0) {
      std::cerr << "raft: no eligible retrieval candidates for window at origin " << sample.origin_index()
                << "; using the base forecast (further cases are counted, not logged)\n";
    }
    ++fallbacks_;
  }
  cache_buffers_.push_back(sample.buffer());
  return cache_.emplace(key, std::move(ctx)).first->second;
}

template <typename T>
RaftParts<T> Raft<T>::forward_parts(const Batch& batch, const ForwardOptions& options) {
  this->check_batch(batch);
  const auto& cfg = this->config_.raft.base;
  const std::size_t b = batch.size();
  const std::size_t l = cfg.lookback;
  const std::size_t h = cfg.horizon;
  const std::size_t c = cfg.channels;

  std::vector<T> window(b * l * c), future(b * h * c), found(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& ctx = context_for(*batch[i]);
    std::transform(ctx.window.begin(), ctx.window.end(), window.begin() + static_cast<std::ptrdiff_t>(i * l * c),
                   [](double v) { return static_cast<T>(v); });
    std::transform(ctx.future.begin(), ctx.future.end(), future.begin() + static_cast<std::ptrdiff_t>(i * h * c),
                   [](double v) { return static_cast<T>(v); });
    found[i] = ctx.found ? T(1) : T(0);
  }

  RaftParts<T> parts;
  detail::Pass pass{options.training, cfg.dropout, &this->dropout_rng_, options.attention_temperature,
                    options.record ? &parts.result.maps : nullptr};
  parts.retrieved = Tensor<T>({b, h, c}, future);
  auto rows = detail::channels_to_rows(stack_lookbacks<T>(batch));
  auto window_rows = detail::channels_to_rows(Tensor<T>({b, l, c}, std::move(window)));
  auto future_rows = detail::channels_to_rows(Tensor<T>({b, h, c}, std::move(future)));
  Tensor<T> base_rows;
  if (cfg.instance_norm) {
    auto stats = detail::InstanceStats<T>::of(rows, cfg.instance_eps);
    base_rows = stats.denormalize((*backbone_)({stats.normalize(rows), stats.normalize(window_rows)},
                                               stats.normalize(future_rows), pass));
  } else {
    base_rows = (*backbone_)({rows, window_rows}, future_rows, pass);
  }
  parts.base = detail::rows_to_channels(base_rows, b, c);

  // Windows without candidates keep the base forecast: gate forced to 1.
  auto mask = Tensor<T>({b, 1, 1}, std::move(found));
  auto g = numerics::reshape(numerics::sigmoid(this->params_.get("gate.logits")), {h, 1});
  parts.gate = numerics::add(numerics::mul(g, mask), numerics::affine(mask, T(-1), T(1)));
  parts.result.forecast = numerics::add(numerics::mul(parts.gate, parts.base),
                                        numerics::mul(numerics::affine(parts.gate, T(-1), T(1)), parts.retrieved));
  return parts;
}

template <typename T>
ForwardResult<T> Raft<T>::forward(const Batch& batch, const ForwardOptions& options) {
  return forward_parts(batch, options).result;
}

template class Raft<float>;
template class Raft<double>;

}  // namespace ctxscale::models
