#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxscale/models/forecaster.hpp"

namespace ctxscale::training {

enum class Schedule { kStepDecay, kCosine };

const char* to_string(Schedule s);
Schedule parse_schedule(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 2021;
  Schedule schedule = Schedule::kStepDecay;
  /// Splits each batch into chunks of this many windows for the backward
  /// pass; gradients are identical up to rounding. 0 keeps whole batches.
  std::size_t micro_batch = 0;
  /// Caps optimizer steps per epoch, taken from the front of the shuffled
  /// order. 0 means every batch.
  std::size_t max_batches_per_epoch = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool early_stopped = false;
  bool restored_best = false;
  /// Where the best parameters were written, if anywhere.
  std::string checkpoint;
};

void to_json(nlohmann::json& j, const TrainRecord& r);
void from_json(const nlohmann::json& j, TrainRecord& r);

/// Raised when a loss goes non-finite.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, std::size_t batch, double loss);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(models::ParameterSet<T>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// One update from the gradients currently stored on the parameters.
  void step(double lr);
  std::size_t steps() const { return steps_; }

 private:
  models::ParameterSet<T>& params_;
  double beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

/// True iff each of the last `patience` entries fails to beat the best
/// value recorded before it.
bool early_stop_check(const std::vector<double>& val_history, std::size_t patience);

/// Learning rate for a 1-based epoch.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fits the model, restores the best-validation parameters and returns the
/// trajectory.
template <typename T>
TrainRecord train(models::Forecaster<T>& model, const std::vector<data::WindowSample>& train_windows,
                  const std::vector<data::WindowSample>& val_windows, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

/// Errors over every window, step and channel in standardized units.
template <typename T>
Evaluation evaluate(models::Forecaster<T>& model, const std::vector<data::WindowSample>& windows,
                    std::size_t batch_size = 32);

/// Repeats the last lookback row across the horizon.
Evaluation persistence_baseline(const std::vector<data::WindowSample>& windows);

}  // namespace ctxscale::training
