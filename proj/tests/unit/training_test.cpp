#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "ctxscale/errors.hpp"
#include "ctxscale/models/architectures.hpp"
#include "ctxscale/numerics/ops.hpp"
#include "ctxscale/training/trainer.hpp"

using namespace ctxscale;
using namespace ctxscale::training;
using data::TimeSeriesDataset;
using data::WindowSample;

namespace {

models::ModelConfig unit_config() {
  models::ModelConfig cfg;
  cfg.kind = models::ModelKind::kPatchTST;
  cfg.patch.lookback = 1;
  cfg.patch.horizon = 1;
  cfg.patch.channels = 1;
  return cfg;
}

// y = w * x on a one-step lookback.
class ScaleModel : public models::Forecaster<double> {
 public:
  explicit ScaleModel(double w0) : Forecaster(unit_config(), 0) {
    w_ = params_.add("w", numerics::Tensor<double>({1}, {w0}, true));
  }
  models::ModelKind kind() const override { return models::ModelKind::kPatchTST; }
  models::ForwardResult<double> forward(const models::Batch& batch, const models::ForwardOptions&) override {
    return {numerics::mul(models::stack_lookbacks<double>(batch), w_), {}};
  }
  double w() const { return w_.item(); }

 private:
  numerics::Tensor<double> w_;
};

// Returns the true target, or zeros.
class CheatModel : public models::Forecaster<double> {
 public:
  CheatModel(models::ModelConfig cfg, bool zero) : Forecaster(std::move(cfg), 0), zero_(zero) {}
  models::ModelKind kind() const override { return models::ModelKind::kPatchTST; }
  models::ForwardResult<double> forward(const models::Batch& batch, const models::ForwardOptions&) override {
    auto t = models::stack_targets<double>(batch);
    return {zero_ ? numerics::scale(t, 0.0) : t, {}};
  }

 private:
  bool zero_;
};

// Pairs (a, 2a) laid end to end; windows start on each pair.
struct PairData {
  TimeSeriesDataset ds;
  std::vector<WindowSample> train, val;
};

PairData pair_data() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise;
  std::vector<double> v;
  for (int i = 0; i < 60; ++i) {
    const double a = noise(rng);
    v.push_back(a);
    v.push_back(2 * a);
  }
  PairData d{TimeSeriesDataset({"x"}, v), {}, {}};
  for (std::size_t p = 0; p < 60; ++p) (p < 45 ? d.train : d.val).emplace_back(d.ds, 2 * p + 1, 1, 1, 0);
  return d;
}

TimeSeriesDataset noisy_series(std::size_t length, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) names.push_back("n" + std::to_string(c));
  std::vector<double> v(length * channels);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < channels; ++c) v[t * channels + c] = std::sin(0.2 * t + c) + 0.5 * noise(rng);
  }
  return TimeSeriesDataset(names, v);
}

models::PatchConfig toy_patch(std::size_t lookback, std::size_t horizon, std::size_t channels) {
  models::PatchConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.e_layers = 1;
  c.d_ff = 16;
  c.dropout = 0.1;
  c.lookback = lookback;
  c.horizon = horizon;
  c.channels = channels;
  return c;
}

TrainConfig quick(std::size_t epochs, double lr) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.patience = epochs - 1;
  c.learning_rate = lr;
  c.batch_size = 8;
  return c;
}

}  // namespace

TEST(EarlyStopTest, PlateauFiresAfterFifthEpoch) {
  std::vector<double> h{0.5, 0.49, 0.50, 0.50, 0.50};
  EXPECT_FALSE(early_stop_check({h.begin(), h.begin() + 4}, 3));
  EXPECT_TRUE(early_stop_check(h, 3));
}

TEST(EarlyStopTest, StrictlyDecreasingNeverFires) {
  std::vector<double> h;
  for (int i = 0; i < 20; ++i) {
    h.push_back(1.0 - 0.01 * i);
    EXPECT_FALSE(early_stop_check(h, 3));
  }
}

TEST(EarlyStopTest, ImprovementResetsCounter) {
  // Best before epoch 4 is 0.49; 0.48 improves on it.
  EXPECT_FALSE(early_stop_check({0.5, 0.49, 0.495, 0.48}, 3));
  // Equal is not an improvement.
  EXPECT_TRUE(early_stop_check({0.5, 0.5, 0.5, 0.5}, 3));
  EXPECT_THROW(early_stop_check({}, 3), ContractError);
}

TEST(LearningRateTest, StepDecayHalvesEachEpoch) {
  TrainConfig c;
  EXPECT_EQ(lr_at(c, 1), 1e-4);
  EXPECT_EQ(lr_at(c, 2), 0.5e-4);
  EXPECT_EQ(lr_at(c, 4), 0.125e-4);
  EXPECT_THROW(lr_at(c, 0), ContractError);
  EXPECT_THROW(lr_at(c, 11), ContractError);
}

TEST(LearningRateTest, CosineEndpointsAndMidpoint) {
  TrainConfig c;
  c.schedule = Schedule::kCosine;
  c.max_epochs = 100;
  EXPECT_EQ(lr_at(c, 1), 1e-4);
  EXPECT_NEAR(lr_at(c, 100), 0.0, 1e-20);
  // Oracle: 1e-4 * (1 + cos(pi * 49 / 99)) / 2.
  EXPECT_NEAR(lr_at(c, 50), 1e-4 * (1 + std::cos(M_PI * 49.0 / 99.0)) / 2, 1e-18);
  EXPECT_NEAR(lr_at(c, 50), 0.5e-4, 1e-6);
  EXPECT_NEAR(lr_at(c, 51), 0.5e-4, 1e-6);
}

TEST(LearningRateTest, SchedulesAreNonIncreasing) {
  for (auto s : {Schedule::kStepDecay, Schedule::kCosine}) {
    for (std::size_t epochs : {2u, 10u, 100u}) {
      TrainConfig c;
      c.schedule = s;
      c.max_epochs = epochs;
      for (std::size_t e = 2; e <= epochs; ++e) EXPECT_LE(lr_at(c, e), lr_at(c, e - 1));
    }
  }
}

TEST(TrainConfigTest, ValidationAndJson) {
  TrainConfig c;
  c.patience = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.schedule = Schedule::kCosine;
  c.max_epochs = 100;
  nlohmann::json j = c;
  auto back = j.get<TrainConfig>();
  EXPECT_EQ(back.schedule, Schedule::kCosine);
  EXPECT_EQ(back.max_epochs, 100u);
  EXPECT_EQ(back.seed, 2021u);
  EXPECT_THROW(parse_schedule("linear"), ConfigError);
}

TEST(AdamTest, FirstStepMatchesHandDerivation) {
  // m = 0.1 g, v = 0.001 g^2; bias-corrected m = g, v = g^2 -> w -= lr g / (|g| + eps).
  models::ParameterSet<double> params;
  auto& w = params.add("w", numerics::Tensor<double>({3}, {1.0, -2.0, 0.5}, true));
  numerics::Tensor<double> g({3}, {0.3, -4.0, 1e-9});
  numerics::sum(numerics::mul(w, g)).backward();
  Adam<double> adam(params);
  adam.step(0.01);
  EXPECT_NEAR(w.values()[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(w.values()[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.values()[2], 0.5 - 0.01 * 1e-9 / (1e-9 + 1e-8), 1e-15);
}

TEST(AdamTest, ZeroGradientsLeaveParametersUnchanged) {
  models::ParameterSet<double> params;
  auto& w = params.add("w", numerics::Tensor<double>({2}, {1.5, -0.0}, true));
  numerics::sum(numerics::scale(w, 0.0)).backward();
  Adam<double> adam(params);
  for (int i = 0; i < 5; ++i) adam.step(1e-2);
  EXPECT_EQ(w.values()[0], 1.5);
  EXPECT_TRUE(std::signbit(w.values()[1]));
}

TEST(TrainTest, LinearModelConvergesToLeastSquaresSlope) {
  // Oracle: least squares over (a, 2a) pairs gives slope sum(2a^2) / sum(a^2) = 2.
  auto d = pair_data();
  ScaleModel model(0.0);
  auto cfg = quick(40, 0.05);
  cfg.schedule = Schedule::kCosine;
  cfg.batch_size = 4;
  auto rec = train(model, d.train, d.val, cfg);
  EXPECT_NEAR(model.w(), 2.0, 1e-2);
  ASSERT_GE(rec.epochs.size(), 3u);
  EXPECT_LT(rec.epochs[1].val_loss, rec.epochs[0].val_loss);
  EXPECT_LT(rec.epochs[2].val_loss, rec.epochs[1].val_loss);
  EXPECT_LT(rec.best_val_loss, 1e-3);
}

TEST(TrainTest, BestValueIsMinimumAndRestored) {
  auto ds = noisy_series(500, 2, 1);
  auto tr = data::make_windows(ds, data::Split::kTrain, 32, 8, 0, 3);
  auto va = data::make_windows(ds, data::Split::kVal, 32, 8, 0);
  models::PatchTST<double> model(toy_patch(32, 8, 2), 1);
  auto rec = train(model, tr, va, quick(4, 1e-2));
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& e : rec.epochs) lowest = std::min(lowest, e.val_loss);
  EXPECT_EQ(rec.best_val_loss, lowest);
  EXPECT_TRUE(rec.restored_best);
  EXPECT_EQ(evaluate(model, va, 8).mse, rec.best_val_loss);
  EXPECT_GT(rec.wall_seconds, 0.0);
}

TEST(TrainTest, ZeroLearningRateIsBitwiseNoOp) {
  auto ds = noisy_series(400, 2, 2);
  auto tr = data::make_windows(ds, data::Split::kTrain, 32, 8, 0, 4);
  auto va = data::make_windows(ds, data::Split::kVal, 32, 8, 0, 4);
  models::PatchTST<double> model(toy_patch(32, 8, 2), 2);
  const auto before = model.parameters().snapshot();
  auto cfg = quick(5, 0.0);
  train(model, tr, va, cfg);
  const auto after = model.parameters().snapshot();
  ASSERT_EQ(before.size(), after.size());
  EXPECT_EQ(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)), 0);
}

TEST(TrainTest, EarlyStoppingStopsAtFirstFiringEpoch) {
  auto ds = noisy_series(400, 2, 3);
  auto tr = data::make_windows(ds, data::Split::kTrain, 32, 8, 0, 4);
  auto va = data::make_windows(ds, data::Split::kVal, 32, 8, 0, 4);
  models::PatchTST<double> model(toy_patch(32, 8, 2), 3);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  auto rec = train(model, tr, va, cfg);
  // Flat validation loss: epochs 2-4 never beat epoch 1.
  EXPECT_TRUE(rec.early_stopped);
  EXPECT_EQ(rec.stopped_epoch, 4u);
  EXPECT_EQ(rec.best_epoch, 1u);
}

TEST(TrainTest, SameSeedGivesIdenticalTrajectories) {
  auto ds = noisy_series(500, 2, 4);
  auto tr = data::make_windows(ds, data::Split::kTrain, 32, 8, 0, 3);
  auto va = data::make_windows(ds, data::Split::kVal, 32, 8, 0, 2);
  auto run = [&](std::uint64_t seed) {
    models::PatchTST<double> model(toy_patch(32, 8, 2), 2021);
    auto cfg = quick(3, 1e-3);
    cfg.seed = seed;
    auto rec = train(model, tr, va, cfg);
    std::vector<double> losses;
    for (const auto& e : rec.epochs) {
      losses.push_back(e.train_loss);
      losses.push_back(e.val_loss);
    }
    return losses;
  };
  auto a = run(2021);
  EXPECT_EQ(a, run(2021));
  EXPECT_NE(a, run(7));
}

TEST(TrainTest, MicroBatchingMatchesWholeBatches) {
  auto ds = noisy_series(400, 2, 5);
  auto tr = data::make_windows(ds, data::Split::kTrain, 32, 8, 0, 5);
  auto va = data::make_windows(ds, data::Split::kVal, 32, 8, 0, 5);
  auto run_nodrop = [&](std::size_t micro) {
    auto pc = toy_patch(32, 8, 2);
    pc.dropout = 0.0;
    models::PatchTST<double> model(pc, 9);
    auto cfg = quick(2, 1e-3);
    cfg.micro_batch = micro;
    train(model, tr, va, cfg);
    return model.parameters().snapshot();
  };
  auto a = run_nodrop(0);
  auto b = run_nodrop(3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(TrainTest, DivergenceReportsEpochAndBatch) {
  auto d = pair_data();
  ScaleModel model(std::numeric_limits<double>::quiet_NaN());
  try {
    train(model, d.train, d.val, quick(3, 0.01));
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1u);
    EXPECT_EQ(e.batch(), 1u);
  }
  EXPECT_THROW(train(model, {}, d.val, quick(3, 0.01)), ContractError);
}

TEST(TrainRecordTest, JsonRoundTrip) {
  TrainRecord r;
  r.epochs.push_back({1, 1e-4, 0.7, 0.6, 1.25});
  r.epochs.push_back({2, 5e-5, 0.5, 0.55, 1.5});
  r.wall_seconds = 2.75;
  r.stopped_epoch = 2;
  r.best_epoch = 2;
  r.best_val_loss = 0.55;
  r.restored_best = true;
  r.checkpoint = "cell/model.ckpt";
  nlohmann::json j = r;
  auto back = nlohmann::json::parse(j.dump()).get<TrainRecord>();
  EXPECT_EQ(back.epochs.size(), 2u);
  EXPECT_EQ(back.epochs[1].val_loss, 0.55);
  EXPECT_EQ(back.best_epoch, 2u);
  EXPECT_EQ(back.checkpoint, "cell/model.ckpt");
}

TEST(EvaluateTest, PerfectAndZeroPredictors) {
  auto ds = noisy_series(300, 3, 6);
  auto windows = data::make_windows(ds, data::Split::kTest, 16, 4, 0);
  models::ModelConfig cfg;
  cfg.kind = models::ModelKind::kPatchTST;
  cfg.patch = toy_patch(16, 4, 3);
  CheatModel perfect(cfg, false);
  auto p = evaluate(perfect, windows, 7);
  EXPECT_EQ(p.mse, 0.0);
  EXPECT_EQ(p.mae, 0.0);
  EXPECT_EQ(p.windows, windows.size());

  // Oracle: second moment and mean magnitude of every target entry.
  long double sq = 0, ab = 0;
  std::size_t n = 0;
  for (const auto& w : windows) {
    for (double x : w.target().data) {
      sq += static_cast<long double>(x) * x;
      ab += std::abs(x);
      ++n;
    }
  }
  CheatModel zero(cfg, true);
  auto z = evaluate(zero, windows, 5);
  EXPECT_NEAR(z.mse, static_cast<double>(sq / n), 1e-12);
  EXPECT_NEAR(z.mae, static_cast<double>(ab / n), 1e-12);
  EXPECT_THROW(evaluate(zero, std::vector<WindowSample>{}), ContractError);
}

TEST(EvaluateTest, PersistenceBaselineMatchesDirectComputation) {
  auto ds = noisy_series(300, 2, 7);
  auto windows = data::make_windows(ds, data::Split::kTest, 16, 4, 0);
  long double sq = 0;
  std::size_t n = 0;
  for (const auto& w : windows) {
    auto last = w.lookback().row(15);
    for (std::size_t h = 0; h < 4; ++h) {
      for (std::size_t c = 0; c < 2; ++c) {
        const long double d = static_cast<long double>(last[c]) - w.target()(h, c);
        sq += d * d;
        ++n;
      }
    }
  }
  auto b = persistence_baseline(windows);
  EXPECT_NEAR(b.mse, static_cast<double>(sq / n), 1e-12);
  EXPECT_TRUE(std::isfinite(b.mae));
}

TEST(RetrievalBenefitTest, RaftBeatsItsBaseOnPeriodicSeries) {
  // Repeated random pattern: the retrieved future equals the true future.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> noise;
  const std::size_t period = 24, channels = 2;
  std::vector<double> pattern(period * channels);
  for (auto& x : pattern) x = noise(rng);
  std::vector<double> v(720 * channels);
  for (std::size_t t = 0; t < 720; ++t) {
    for (std::size_t c = 0; c < channels; ++c) v[t * channels + c] = pattern[(t % period) * channels + c];
  }
  TimeSeriesDataset ds({"a", "b"}, v);
  auto tr = data::make_windows(ds, data::Split::kTrain, 48, 12, 0, 2);
  auto va = data::make_windows(ds, data::Split::kVal, 48, 12, 0, 2);
  auto te = data::make_windows(ds, data::Split::kTest, 48, 12, 0);
  auto index = std::make_shared<const retrieval::RetrievalIndex>(retrieval::RetrievalIndex::build(ds, 48, 12));

  auto base_cfg = toy_patch(48, 12, 2);
  models::RaftConfig rc;
  rc.base = base_cfg;
  rc.top_k = 3;
  auto cfg = quick(6, 1e-3);
  models::PatchTST<double> base(base_cfg, 2021);
  models::Raft<double> raft(rc, 2021, index);
  train(base, tr, va, cfg);
  train(raft, tr, va, cfg);
  const double base_mse = evaluate(base, te).mse;
  const double raft_mse = evaluate(raft, te).mse;
  RecordProperty("base_mse", std::to_string(base_mse));
  RecordProperty("raft_mse", std::to_string(raft_mse));
  EXPECT_LT(raft_mse, base_mse);
}
