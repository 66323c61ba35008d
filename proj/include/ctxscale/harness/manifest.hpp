#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxscale/data/dataset.hpp"
#include "ctxscale/data/synthetic.hpp"
#include "ctxscale/models/config.hpp"
#include "ctxscale/training/trainer.hpp"

namespace ctxscale::harness {

enum class Precision { kF32, kF64 };

const char* to_string(Precision p);
Precision parse_precision(const std::string& name);

/// A CSV file or a generated series.
struct DatasetEntry {
  std::string name;
  std::filesystem::path path;
  std::string date_column = "date";
  /// Leading rows kept; 0 keeps all.
  std::size_t rows = 0;
  std::optional<data::SyntheticSpec> synthetic;

  /// Loads and standardizes on the training split.
  data::TimeSeriesDataset load() const;
};

void to_json(nlohmann::json& j, const DatasetEntry& d);
void from_json(const nlohmann::json& j, DatasetEntry& d);

struct ExperimentSpec {
  std::string name;
  std::string dataset;
  models::ModelConfig model;
  training::TrainConfig train;
  Precision precision = Precision::kF32;
  bool probe_entropy = false;
  std::size_t probe_samples = 64;
  /// Keep every n-th window origin of each split.
  std::size_t train_step = 1;
  std::size_t val_step = 1;
  std::size_t test_step = 1;

  std::size_t lookback() const { return model.lookback(); }
  std::size_t horizon() const { return model.horizon(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

struct Manifest {
  std::map<std::string, DatasetEntry> datasets;
  std::vector<ExperimentSpec> cells;

  const DatasetEntry& dataset(const std::string& name) const;
};

/// INI-style matrix description:
///
///   [defaults]            keys applied to every cell
///   [dataset NAME]        path, date_column, rows | generator, rows, channels, seed, period
///   [cell NAME]           model, dataset and any override
///
/// Cell keys use the hyperparameter-table names (seq_len, pred_len,
/// label_len, d_model, n_heads, e_layers, d_layers, d_ff, dropout,
/// patch_len, stride, top_k, learning_rate, batch_size, epochs, patience)
/// plus the extras listed in the README. Relative paths resolve against
/// `base_dir`. Unknown keys raise ConfigError.
Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
Manifest load_manifest(const std::filesystem::path& path);

/// Every key the cell sections accept.
const std::vector<std::string>& cell_keys();

}  // namespace ctxscale::harness
