#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "ctxscale/data/dataset.hpp"

namespace ctxscale::retrieval {

using data::MatrixView;

/// Which candidates a query may see. kStrictPast is the only production
/// rule; kFutureOnly exists so tests can prove the leakage checks fire.
enum class Eligibility { kStrictPast, kFutureOnly };

/// Candidate pool cut from the training split. Candidate i covers window
/// rows [origin - m, origin) and future rows [origin, origin + H).
class RetrievalIndex {
 public:
  /// Dense pool over the training split at the given origin stride.
  static RetrievalIndex build(const data::TimeSeriesDataset& ds, std::size_t window_length, std::size_t horizon,
                              std::size_t stride = 1);

  std::size_t size() const { return origins_.size(); }
  std::size_t window_length() const { return window_length_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t channels() const { return channels_; }
  std::size_t stride() const { return stride_; }

  std::size_t origin(std::size_t i) const { return origins_[i]; }
  MatrixView window(std::size_t i) const;
  MatrixView future(std::size_t i) const;
  /// Per-channel window mean.
  std::span<const double> window_mean(std::size_t i) const;
  /// L2 norm of the mean-removed window, all channels or one.
  double centered_norm(std::size_t i) const;
  double centered_norm(std::size_t i, std::size_t channel) const;

  /// Binary dump: header, then per candidate its origin and (m + H) x C
  /// row-major values (window rows followed by future rows).
  void save(const std::filesystem::path& path) const;
  static RetrievalIndex load(const std::filesystem::path& path);

 private:
  void compute_statistics();
  MatrixView rows(std::size_t begin, std::size_t end) const;

  std::shared_ptr<const std::vector<double>> series_;
  std::size_t channels_ = 0;
  std::size_t window_length_ = 0;
  std::size_t horizon_ = 0;
  std::size_t stride_ = 1;
  std::vector<std::size_t> origins_;
  std::vector<double> means_;           // size() x C
  std::vector<double> channel_norms_;   // size() x C
  std::vector<double> norms_;           // size()
};

struct Segment {
  std::size_t origin = 0;
  double similarity = 0.0;
  MatrixView window;
  MatrixView future;
};

/// Top-k matches, best first; ties broken by smaller origin.
struct RetrievedSet {
  std::vector<Segment> segments;
  /// Set when similarities were computed on one channel only.
  std::optional<std::size_t> channel;
  std::size_t eligible = 0;

  bool empty() const { return segments.empty(); }
};

struct QueryOptions {
  std::size_t k = 5;
  Eligibility eligibility = Eligibility::kStrictPast;
  /// Channel-independent mode: rank on this channel alone.
  std::optional<std::size_t> channel;
};

/// Exact cosine top-k over per-channel mean-removed windows.
///
/// `query` holds the m rows ending just before `query_origin`. A candidate is
/// eligible only when its future ends at or before the query window starts,
/// so it never overlaps [query_origin - m, query_origin + H). Zero-norm
/// pairs score 0 and rank after every non-degenerate candidate.
RetrievedSet cosine_topk(const RetrievalIndex& index, const MatrixView& query, std::size_t query_origin,
                         const QueryOptions& options);

bool is_eligible(const RetrievalIndex& index, std::size_t candidate, std::size_t query_origin, Eligibility rule);

/// Softmax(similarity / temperature)-weighted mean of the retrieved futures,
/// as an H x C row-major matrix.
std::vector<double> aggregate_futures(const RetrievedSet& set, double temperature);

/// Softmax weights used by aggregate_futures.
std::vector<double> similarity_weights(const RetrievedSet& set, double temperature);

}  // namespace ctxscale::retrieval
