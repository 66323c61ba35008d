#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "ctxscale/errors.hpp"

namespace ctxscale::metrics {

/// Mean squared error over all entries.
double mse(std::span<const double> pred, std::span<const double> truth);
/// Mean absolute error over all entries.
double mae(std::span<const double> pred, std::span<const double> truth);

/// 100 * (extended - base) / base. Throws ContractError for base <= 0.
double degradation(double base, double extended);

/// Running MSE/MAE over many forecast blocks, weighted by entry count.
class ErrorAccumulator {
 public:
  void add(std::span<const double> pred, std::span<const double> truth);
  std::size_t count() const { return count_; }
  double mse() const;
  double mae() const;

 private:
  long double squared_ = 0;
  long double absolute_ = 0;
  std::size_t count_ = 0;
};

/// One row of a results table.
struct CellResult {
  std::string model;
  std::string dataset;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  double mse = 0.0;
  double mae = 0.0;
  double train_seconds = 0.0;
  std::uint64_t seed = 0;
};

}  // namespace ctxscale::metrics
