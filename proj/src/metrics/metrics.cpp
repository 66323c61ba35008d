#include "ctxscale/metrics/metrics.hpp"

#include <cmath>

namespace ctxscale::metrics {

namespace {

void check_shapes(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("prediction has " + std::to_string(pred.size()) + " entries, truth has " +
                         std::to_string(truth.size()));
  }
  if (pred.empty()) throw ContractError("error metric over zero entries");
}

}  // namespace

void ErrorAccumulator::add(std::span<const double> pred, std::span<const double> truth) {
  check_shapes(pred, truth);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long double d = static_cast<long double>(pred[i]) - truth[i];
    squared_ += d * d;
    absolute_ += std::fabs(d);
  }
  count_ += pred.size();
}

double ErrorAccumulator::mse() const {
  if (count_ == 0) throw ContractError("no forecasts accumulated");
  return static_cast<double>(squared_ / count_);
}

double ErrorAccumulator::mae() const {
  if (count_ == 0) throw ContractError("no forecasts accumulated");
  return static_cast<double>(absolute_ / count_);
}

double mse(std::span<const double> pred, std::span<const double> truth) {
  ErrorAccumulator acc;
  acc.add(pred, truth);
  return acc.mse();
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  ErrorAccumulator acc;
  acc.add(pred, truth);
  return acc.mae();
}

double degradation(double base, double extended) {
  if (!(base > 0.0)) throw ContractError("degradation needs a positive base, got " + std::to_string(base));
  return 100.0 * (extended - base) / base;
}

}  // namespace ctxscale::metrics
