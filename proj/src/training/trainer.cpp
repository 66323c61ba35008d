#include "ctxscale/training/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ctxscale/errors.hpp"
#include "ctxscale/metrics/metrics.hpp"
#include "ctxscale/numerics/ops.hpp"

namespace ctxscale::training {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

models::Batch slice(const std::vector<const data::WindowSample*>& order, std::size_t first, std::size_t count) {
  const std::size_t last = std::min(first + count, order.size());
  return models::Batch(order.begin() + static_cast<std::ptrdiff_t>(first),
                       order.begin() + static_cast<std::ptrdiff_t>(last));
}

}  // namespace

const char* to_string(Schedule s) { return s == Schedule::kCosine ? "cosine" : "step_decay"; }

Schedule parse_schedule(const std::string& name) {
  if (name == "step_decay" || name == "type1") return Schedule::kStepDecay;
  if (name == "cosine") return Schedule::kCosine;
  throw ConfigError("unknown learning-rate schedule '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("epochs must be positive");
  if (patience >= max_epochs) {
    throw ConfigError("patience " + std::to_string(patience) + " must be below epochs " + std::to_string(max_epochs));
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"epochs", c.max_epochs},           {"patience", c.patience},
                     {"seed", c.seed},                   {"schedule", to_string(c.schedule)},
                     {"micro_batch", c.micro_batch},     {"max_batches_per_epoch", c.max_batches_per_epoch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("epochs")) c.max_epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("patience")) c.patience = j.at("patience").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  if (j.contains("micro_batch")) c.micro_batch = j.at("micro_batch").get<std::size_t>();
  if (j.contains("max_batches_per_epoch")) c.max_batches_per_epoch = j.at("max_batches_per_epoch").get<std::size_t>();
}

void to_json(nlohmann::json& j, const TrainRecord& r) {
  j = nlohmann::json{{"wall_seconds", r.wall_seconds},   {"stopped_epoch", r.stopped_epoch},
                     {"best_epoch", r.best_epoch},       {"best_val_loss", r.best_val_loss},
                     {"early_stopped", r.early_stopped}, {"restored_best", r.restored_best},
                     {"checkpoint", r.checkpoint},       {"epochs", nlohmann::json::array()}};
  for (const auto& e : r.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"learning_rate", e.learning_rate},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"seconds", e.seconds}});
  }
}

void from_json(const nlohmann::json& j, TrainRecord& r) {
  r = TrainRecord{};
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.stopped_epoch = j.at("stopped_epoch").get<std::size_t>();
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.early_stopped = j.at("early_stopped").get<bool>();
  r.restored_best = j.at("restored_best").get<bool>();
  r.checkpoint = j.value("checkpoint", "");
  for (const auto& e : j.at("epochs")) {
    EpochRecord er;
    er.epoch = e.at("epoch").get<std::size_t>();
    er.learning_rate = e.at("learning_rate").get<double>();
    er.train_loss = e.at("train_loss").get<double>();
    er.val_loss = e.at("val_loss").get<double>();
    er.seconds = e.at("seconds").get<double>();
    r.epochs.push_back(er);
  }
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t batch, double loss)
    : NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                   " (loss " + std::to_string(loss) + ")"),
      epoch_(epoch),
      batch_(batch) {}

template <typename T>
Adam<T>::Adam(models::ParameterSet<T>& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, t] : params_.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto& entries = params_.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& tensor = entries[p].second;
    if (!tensor.has_grad()) continue;
    auto g = tensor.grad();
    auto w = tensor.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      if (update != 0.0) w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
}

bool early_stop_check(const std::vector<double>& val_history, std::size_t patience) {
  if (val_history.empty()) throw ContractError("early stopping needs a non-empty history");
  if (patience == 0 || val_history.size() <= patience) return false;
  const std::size_t first = val_history.size() - patience;
  double best = val_history[0];
  for (std::size_t i = 1; i < first; ++i) best = std::min(best, val_history[i]);
  for (std::size_t i = first; i < val_history.size(); ++i) {
    if (val_history[i] < best) return false;
  }
  return true;
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch < 1 || epoch > cfg.max_epochs) {
    throw ContractError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.max_epochs) + "]");
  }
  const double e = static_cast<double>(epoch - 1);
  if (cfg.schedule == Schedule::kStepDecay) return cfg.learning_rate * std::pow(0.5, e);
  if (cfg.max_epochs == 1) return cfg.learning_rate;
  return cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * e / static_cast<double>(cfg.max_epochs - 1))) / 2.0;
}

template <typename T>
TrainRecord train(models::Forecaster<T>& model, const std::vector<data::WindowSample>& train_windows,
                  const std::vector<data::WindowSample>& val_windows, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_windows.empty() || val_windows.empty()) throw ContractError("training needs train and val windows");
  const auto start = Clock::now();
  model.seed_dropout(cfg.seed);
  numerics::Rng shuffle_rng(cfg.seed);
  Adam<T> adam(model.parameters());
  auto& params = model.parameters();

  std::vector<const data::WindowSample*> order;
  for (const auto& w : train_windows) order.push_back(&w);
  const std::size_t chunk = cfg.micro_batch == 0 ? cfg.batch_size : std::min(cfg.micro_batch, cfg.batch_size);

  TrainRecord record;
  std::vector<double> history;
  std::vector<T> best;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = lr_at(cfg, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.engine()() % i);
      std::swap(order[i - 1], order[j]);
    }
    std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
    if (cfg.max_batches_per_epoch > 0) batches = std::min(batches, cfg.max_batches_per_epoch);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = slice(order, b * cfg.batch_size, cfg.batch_size);
      params.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < batch.size(); c += chunk) {
        models::Batch part(batch.begin() + static_cast<std::ptrdiff_t>(c),
                           batch.begin() + static_cast<std::ptrdiff_t>(std::min(c + chunk, batch.size())));
        const T weight = static_cast<T>(part.size()) / static_cast<T>(batch.size());
        models::ForwardOptions options;
        options.training = true;
        auto loss = numerics::mse_loss(model.forward(part, options).forecast, models::stack_targets<T>(part));
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) throw DivergenceError(epoch, b + 1, value);
        batch_loss += value * static_cast<double>(weight);
        numerics::scale(loss, weight).backward();
      }
      adam.step(lr);
      loss_sum += batch_loss * static_cast<double>(batch.size());
      seen += batch.size();
    }

    const double val = evaluate(model, val_windows, cfg.batch_size).mse;
    if (!std::isfinite(val)) throw DivergenceError(epoch, 0, val);
    if (history.empty() || val < record.best_val_loss) {
      record.best_val_loss = val;
      record.best_epoch = epoch;
      best = params.snapshot();
    }
    history.push_back(val);
    EpochRecord er{epoch, lr, loss_sum / static_cast<double>(seen), val, seconds_since(epoch_start)};
    record.epochs.push_back(er);
    record.stopped_epoch = epoch;
    if (on_epoch) on_epoch(er);
    if (early_stop_check(history, cfg.patience)) {
      record.early_stopped = true;
      break;
    }
  }
  params.restore(best);
  params.zero_grad();
  record.restored_best = true;
  record.wall_seconds = seconds_since(start);
  return record;
}

template <typename T>
Evaluation evaluate(models::Forecaster<T>& model, const std::vector<data::WindowSample>& windows,
                    std::size_t batch_size) {
  if (windows.empty()) throw ContractError("evaluation needs at least one window");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  numerics::NoGradGuard guard;
  metrics::ErrorAccumulator acc;
  std::vector<const data::WindowSample*> all;
  for (const auto& w : windows) all.push_back(&w);
  std::vector<double> pred, truth;
  for (std::size_t first = 0; first < all.size(); first += batch_size) {
    const auto batch = slice(all, first, batch_size);
    auto forecast = model.forward(batch, {}).forecast;
    pred.assign(forecast.values().begin(), forecast.values().end());
    truth.clear();
    for (const auto* w : batch) {
      auto t = w->target().data;
      truth.insert(truth.end(), t.begin(), t.end());
    }
    acc.add(pred, truth);
  }
  return {acc.mse(), acc.mae(), windows.size()};
}

Evaluation persistence_baseline(const std::vector<data::WindowSample>& windows) {
  if (windows.empty()) throw ContractError("evaluation needs at least one window");
  metrics::ErrorAccumulator acc;
  std::vector<double> pred;
  for (const auto& w : windows) {
    auto look = w.lookback();
    auto last = look.data.subspan((look.rows - 1) * look.cols, look.cols);
    pred.clear();
    for (std::size_t h = 0; h < w.horizon(); ++h) pred.insert(pred.end(), last.begin(), last.end());
    acc.add(pred, std::vector<double>(w.target().data.begin(), w.target().data.end()));
  }
  return {acc.mse(), acc.mae(), windows.size()};
}

template class Adam<float>;
template class Adam<double>;
template TrainRecord train(models::Forecaster<float>&, const std::vector<data::WindowSample>&,
                           const std::vector<data::WindowSample>&, const TrainConfig&, const EpochCallback&);
template TrainRecord train(models::Forecaster<double>&, const std::vector<data::WindowSample>&,
                           const std::vector<data::WindowSample>&, const TrainConfig&, const EpochCallback&);
template Evaluation evaluate(models::Forecaster<float>&, const std::vector<data::WindowSample>&, std::size_t);
template Evaluation evaluate(models::Forecaster<double>&, const std::vector<data::WindowSample>&, std::size_t);

}  // namespace ctxscale::training
