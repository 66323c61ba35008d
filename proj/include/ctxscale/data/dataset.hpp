#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctxscale/errors.hpp"

namespace ctxscale::data {

/// Read-only row-major view over a block of consecutive timesteps.
struct MatrixView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
Split parse_split(const std::string& name);

struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
};

/// Per-channel z-score parameters fitted on the training rows.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  double transform(std::size_t channel, double raw) const { return (raw - mean[channel]) / std[channel]; }
  double inverse(std::size_t channel, double z) const { return z * std[channel] + mean[channel]; }
};

/// Multichannel series with its 60/20/20 split and, once fitted, its scaler.
/// Immutable after construction; copies share the value buffer.
class TimeSeriesDataset {
 public:
  TimeSeriesDataset() = default;
  TimeSeriesDataset(std::vector<std::string> channel_names, std::vector<double> values);

  const std::vector<std::string>& channel_names() const { return channel_names_; }
  std::size_t length() const { return length_; }
  std::size_t channels() const { return channel_names_.size(); }
  const SplitBounds& bounds() const { return bounds_; }
  std::size_t split_begin(Split split) const;
  std::size_t split_end(Split split) const;

  bool standardized() const { return scaler_ != nullptr; }
  const Scaler& scaler() const;

  double at(std::size_t t, std::size_t c) const { return (*values_)[t * channels() + c]; }
  std::span<const double> values() const { return *values_; }
  const std::shared_ptr<const std::vector<double>>& shared_values() const { return values_; }
  MatrixView rows(std::size_t begin, std::size_t end) const;

  /// Non-fatal ingestion findings (e.g. timestamps out of order).
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::string name;

 private:
  friend TimeSeriesDataset fit_transform(const TimeSeriesDataset&);
  friend TimeSeriesDataset load_csv(const std::filesystem::path&, const std::string&, std::size_t);

  std::vector<std::string> channel_names_;
  std::size_t length_ = 0;
  std::shared_ptr<const std::vector<double>> values_ = std::make_shared<std::vector<double>>();
  SplitBounds bounds_;
  std::shared_ptr<const Scaler> scaler_;
  std::vector<std::string> warnings_;
};

/// Reads a header-row CSV with one date column; every other column is a
/// numeric channel in header order. `max_rows` > 0 keeps only the leading
/// rows (the ETT benchmarks use the first 14,400 hours).
TimeSeriesDataset load_csv(const std::filesystem::path& path, const std::string& date_column = "date",
                           std::size_t max_rows = 0);

/// Fits the scaler on [0, train_end) and returns the standardized series.
/// Already-standardized input is returned unchanged.
TimeSeriesDataset fit_transform(const TimeSeriesDataset& ds);

/// Maps standardized values (rows x channels) back to raw units.
std::vector<double> inverse_transform(const TimeSeriesDataset& ds, std::span<const double> standardized);

/// One (lookback, decoder seed, target) triple. A view into the dataset.
class WindowSample {
 public:
  WindowSample(const TimeSeriesDataset& ds, std::size_t origin, std::size_t lookback, std::size_t horizon,
               std::size_t label_len);

  /// Rows [origin - L, origin).
  MatrixView lookback() const { return rows(origin_ - lookback_len_, origin_); }
  /// Final label_len rows of the lookback.
  MatrixView decoder_seed() const { return rows(origin_ - label_len_, origin_); }
  /// Rows [origin, origin + H).
  MatrixView target() const { return rows(origin_, origin_ + horizon_); }

  std::size_t origin_index() const { return origin_; }
  std::size_t lookback_length() const { return lookback_len_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t label_len() const { return label_len_; }
  std::size_t channels() const { return channels_; }
  /// Value buffer of the owning dataset.
  const std::shared_ptr<const std::vector<double>>& buffer() const { return values_; }

 private:
  MatrixView rows(std::size_t begin, std::size_t end) const {
    return {std::span<const double>(*values_).subspan(begin * channels_, (end - begin) * channels_), end - begin,
            channels_};
  }

  std::shared_ptr<const std::vector<double>> values_;
  std::size_t channels_;
  std::size_t origin_;
  std::size_t lookback_len_;
  std::size_t horizon_;
  std::size_t label_len_;
};

/// Target origins valid for `split`: every target lies inside the split,
/// lookbacks may reach into earlier rows.
struct OriginRange {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
  std::size_t count() const { return last + 1 - first; }
};

OriginRange window_origins(const TimeSeriesDataset& ds, Split split, std::size_t lookback, std::size_t horizon);

/// Stride-1 windows of a split; `step` > 1 keeps every step-th origin.
std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, Split split, std::size_t lookback,
                                       std::size_t horizon, std::size_t label_len, std::size_t step = 1);

}  // namespace ctxscale::data
