#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxscale/diagnostics/entropy.hpp"
#include "ctxscale/harness/manifest.hpp"
#include "ctxscale/metrics/metrics.hpp"
#include "ctxscale/training/trainer.hpp"

namespace ctxscale::harness {

struct CellOutcome {
  std::string name;
  bool ok = false;
  std::string error;
  metrics::CellResult result;
  std::optional<training::TrainRecord> train;
  std::optional<diagnostics::AttentionStats> entropy;
  double persistence_mse = 0.0;
  std::string precision;
  /// Loaded from a previous run rather than trained now.
  bool resumed = false;
};

void to_json(nlohmann::json& j, const CellOutcome& c);
void from_json(const nlohmann::json& j, CellOutcome& c);

/// One model on one dataset and horizon, shortest
/// lookback against a longer one.
struct DegradationRow {
  std::string model;
  std::string dataset;
  std::size_t horizon = 0;
  std::string base_cell;
  std::string extended_cell;
  std::size_t base_lookback = 0;
  std::size_t extended_lookback = 0;
  double base_mse = 0.0;
  double extended_mse = 0.0;
  double percent = 0.0;
};

/// Published zero-shot numbers; never computed here.
struct LiteratureRow {
  std::string model;
  std::size_t context = 0;
  double mse = 0.0;
  double mae = 0.0;
};

struct ExperimentReport {
  std::vector<CellOutcome> cells;
  std::vector<DegradationRow> degradation;
  std::vector<LiteratureRow> literature;

  std::size_t failures() const;
};

using Logger = std::function<void(const std::string&)>;

struct RunOptions {
  std::size_t parallelism = 1;
  std::optional<std::uint64_t> seed;
  std::optional<Precision> precision;
  Logger log;
};

/// Trains, evaluates and optionally probes one cell, writing the checkpoint,
/// training record and result.json under `cell_dir`. Errors are captured in
/// the outcome.
CellOutcome run_cell(const ExperimentSpec& spec, const DatasetEntry& dataset, const std::filesystem::path& cell_dir,
                     const Logger& log = {});

/// Runs every cell under `out/cells/<name>`. Cells with a successful
/// result.json are loaded instead of retrained. parallelism > 1 forks one
/// process per cell.
ExperimentReport run_matrix(const Manifest& manifest, const std::filesystem::path& out, const RunOptions& options = {});

/// Pairs the shortest lookback of each (model, dataset, horizon) group with
/// every longer one.
std::vector<DegradationRow> degradation_table(const std::vector<CellOutcome>& cells);

/// Reads model,context,mse,mae rows.
std::vector<LiteratureRow> load_literature(const std::filesystem::path& csv);
/// The bundled reference table.
std::vector<LiteratureRow> default_literature();

enum class Format { kCsv, kJson, kSvg };

/// Writes cells.csv, report.json and mse_vs_lookback.svg as requested.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir,
                 const std::set<Format>& formats = {Format::kCsv, Format::kJson, Format::kSvg});

std::string report_csv(const ExperimentReport& report);
nlohmann::json report_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);
std::string report_svg(const ExperimentReport& report);

/// Rebuilds a report from the cell results under `dir/cells`, in matrix
/// order when `dir/matrix.json` exists.
ExperimentReport load_report(const std::filesystem::path& dir);

}  // namespace ctxscale::harness
