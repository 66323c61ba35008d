#include "ctxscale/harness/restore.hpp"

#include "ctxscale/errors.hpp"
#include "ctxscale/models/checkpoint.hpp"

namespace ctxscale::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Saved {
  ExperimentSpec spec;
  DatasetEntry entry;
  models::ModelConfig config;
  Precision precision;
};

Saved read_saved(const fs::path& checkpoint, std::optional<Precision> precision) {
  auto info = models::read_checkpoint_info(checkpoint);
  if (!info.extra.contains("cell") || !info.extra.contains("dataset")) {
    throw ConfigError(checkpoint.string() + " carries no cell metadata");
  }
  Saved s{info.extra.at("cell").get<ExperimentSpec>(), info.extra.at("dataset").get<DatasetEntry>(), info.config,
          info.scalar_bytes == 8 ? Precision::kF64 : Precision::kF32};
  if (precision) s.precision = *precision;
  return s;
}

template <typename T>
struct Restored {
  data::TimeSeriesDataset ds;
  std::unique_ptr<models::Forecaster<T>> model;
  std::vector<data::WindowSample> windows;
};

template <typename T>
Restored<T> restore(const fs::path& checkpoint, const Saved& s, data::Split split, std::size_t step) {
  Restored<T> r;
  r.ds = s.entry.load();
  const auto& cfg = s.config;
  if (cfg.kind == models::ModelKind::kVanilla ? cfg.vanilla.channels != r.ds.channels()
      : cfg.kind == models::ModelKind::kPatchTST ? cfg.patch.channels != r.ds.channels()
                                                 : cfg.raft.base.channels != r.ds.channels()) {
    throw ConfigError("dataset " + r.ds.name + " no longer matches the checkpoint's channel count");
  }
  std::shared_ptr<const retrieval::RetrievalIndex> index;
  if (cfg.kind == models::ModelKind::kRaft) {
    index = std::make_shared<const retrieval::RetrievalIndex>(
        retrieval::RetrievalIndex::build(r.ds, cfg.raft.key_length(), cfg.horizon(), cfg.raft.retrieval_stride));
  }
  r.model = models::make_forecaster<T>(cfg, s.spec.train.seed, index);
  models::load_parameters(checkpoint, *r.model);
  const std::size_t label = cfg.kind == models::ModelKind::kVanilla ? cfg.vanilla.label_len : 0;
  r.windows = data::make_windows(r.ds, split, cfg.lookback(), cfg.horizon(), label, step);
  if (r.windows.empty()) throw ConfigError(std::string("no ") + data::to_string(split) + " windows");
  return r;
}

std::size_t step_for(const ExperimentSpec& spec, data::Split split) {
  switch (split) {
    case data::Split::kTrain: return spec.train_step;
    case data::Split::kVal: return spec.val_step;
    default: return spec.test_step;
  }
}

template <typename T>
CheckpointEvaluation evaluate_typed(const fs::path& checkpoint, const Saved& s, data::Split split) {
  auto r = restore<T>(checkpoint, s, split, step_for(s.spec, split));
  const std::size_t batch = s.spec.train.micro_batch ? s.spec.train.micro_batch : s.spec.train.batch_size;
  CheckpointEvaluation out;
  out.cell = s.spec.name;
  out.split = data::to_string(split);
  out.precision = to_string(s.precision);
  out.eval = training::evaluate(*r.model, r.windows, batch);
  out.persistence_mse = training::persistence_baseline(r.windows).mse;
  return out;
}

template <typename T>
diagnostics::AttentionStats probe_typed(const fs::path& checkpoint, const Saved& s, data::Split split,
                                        std::size_t samples, double temperature) {
  auto r = restore<T>(checkpoint, s, split, step_for(s.spec, split));
  return diagnostics::probe(*r.model, r.windows, s.config.lookback(), samples, temperature);
}

}  // namespace

void to_json(json& j, const CheckpointEvaluation& e) {
  j = json{{"cell", e.cell},           {"split", e.split},         {"precision", e.precision},
           {"mse", e.eval.mse},        {"mae", e.eval.mae},        {"windows", e.eval.windows},
           {"persistence_mse", e.persistence_mse}};
}

CheckpointEvaluation evaluate_checkpoint(const fs::path& checkpoint, data::Split split,
                                         std::optional<Precision> precision) {
  auto s = read_saved(checkpoint, precision);
  return s.precision == Precision::kF64 ? evaluate_typed<double>(checkpoint, s, split)
                                        : evaluate_typed<float>(checkpoint, s, split);
}

diagnostics::AttentionStats probe_checkpoint(const fs::path& checkpoint, data::Split split, std::size_t samples,
                                             double temperature, std::optional<Precision> precision) {
  auto s = read_saved(checkpoint, precision);
  return s.precision == Precision::kF64 ? probe_typed<double>(checkpoint, s, split, samples, temperature)
                                        : probe_typed<float>(checkpoint, s, split, samples, temperature);
}

}  // namespace ctxscale::harness
