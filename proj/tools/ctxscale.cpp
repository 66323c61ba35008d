#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxscale/errors.hpp"
#include "ctxscale/harness/restore.hpp"
#include "ctxscale/harness/runner.hpp"

using namespace ctxscale;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 1;
constexpr int kCellFailure = 2;

struct Globals {
  std::uint64_t seed = 2021;
  bool seed_given = false;
  std::string precision;
  std::size_t parallelism = 1;
  std::string out;
};

void log_line(const std::string& msg) { std::cerr << "[ctxscale] " << msg << std::endl; }

std::optional<harness::Precision> precision_of(const Globals& g) {
  if (g.precision.empty()) return std::nullopt;
  return harness::parse_precision(g.precision);
}

void write_file(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
  if (!out) throw IoError("failed writing " + path.string());
}

void emit_json(const Globals& g, const std::string& file, const json& j) {
  std::cout << j.dump(2) << '\n';
  if (!g.out.empty()) write_file(fs::path(g.out) / file, j.dump(2) + "\n");
}

// ---- ingest

struct IngestArgs {
  std::string source;
  std::string date_column = "date";
  std::size_t rows = 0;
  std::size_t channels = 7;
  std::size_t period = 24;
};

harness::DatasetEntry entry_for(const IngestArgs& a, const Globals& g) {
  harness::DatasetEntry e;
  const std::string prefix = "synthetic:";
  if (a.source.rfind(prefix, 0) == 0) {
    data::SyntheticSpec s;
    s.kind = data::parse_generator(a.source.substr(prefix.size()));
    s.rows = a.rows ? a.rows : 14400;
    s.channels = a.channels;
    s.seed = g.seed;
    s.period = a.period;
    e.synthetic = s;
    e.name = data::to_string(s.kind);
  } else {
    e.path = fs::absolute(a.source);
    e.date_column = a.date_column;
    e.rows = a.rows;
    e.name = e.path.stem().string();
  }
  return e;
}

int run_ingest(const IngestArgs& a, const Globals& g) {
  auto entry = entry_for(a, g);
  auto ds = entry.load();
  const auto& sc = ds.scaler();
  json channels = json::array();
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    channels.push_back({{"name", ds.channel_names()[c]}, {"mean", sc.mean[c]}, {"std", sc.std[c]}});
  }
  json j{{"dataset", entry},
         {"rows", ds.length()},
         {"channels", channels},
         {"splits",
          {{"train", {0, ds.bounds().train_end}},
           {"val", {ds.bounds().train_end, ds.bounds().val_end}},
           {"test", {ds.bounds().val_end, ds.length()}}}},
         {"warnings", ds.warnings()}};
  for (const auto& w : ds.warnings()) log_line("warning: " + w);
  emit_json(g, "dataset.json", j);
  return kOk;
}

// ---- train

struct TrainArgs {
  std::string manifest;
  std::string cell;
};

const harness::ExperimentSpec& pick_cell(const harness::Manifest& m, const std::string& name) {
  if (name.empty()) {
    if (m.cells.size() != 1) {
      throw ConfigError("manifest has " + std::to_string(m.cells.size()) + " cells; choose one with --cell");
    }
    return m.cells.front();
  }
  for (const auto& c : m.cells) {
    if (c.name == name) return c;
  }
  throw ConfigError("no cell named " + name);
}

int run_train(const TrainArgs& a, const Globals& g) {
  auto m = harness::load_manifest(a.manifest);
  auto spec = pick_cell(m, a.cell);
  if (g.seed_given) spec.train.seed = g.seed;
  if (auto p = precision_of(g)) spec.precision = *p;
  const fs::path out = g.out.empty() ? fs::path("runs") : fs::path(g.out);
  auto outcome = harness::run_cell(spec, m.dataset(spec.dataset), out / "cells" / spec.name, log_line);
  std::cout << json(outcome).dump(2) << '\n';
  return outcome.ok ? kOk : kCellFailure;
}

// ---- evaluate / probe

struct CheckpointArgs {
  std::string checkpoint;
  std::string split = "test";
  std::size_t samples = 64;
  double temperature = 1.0;
};

int run_evaluate(const CheckpointArgs& a, const Globals& g) {
  auto e = harness::evaluate_checkpoint(a.checkpoint, data::parse_split(a.split), precision_of(g));
  emit_json(g, "evaluation.json", e);
  return kOk;
}

int run_probe(const CheckpointArgs& a, const Globals& g) {
  auto stats = harness::probe_checkpoint(a.checkpoint, data::parse_split(a.split), a.samples, a.temperature,
                                         precision_of(g));
  emit_json(g, "entropy.json", stats);
  return kOk;
}

// ---- matrix / report

std::set<harness::Format> parse_formats(const std::vector<std::string>& names) {
  std::set<harness::Format> out;
  for (const auto& n : names) {
    if (n == "csv") out.insert(harness::Format::kCsv);
    else if (n == "json") out.insert(harness::Format::kJson);
    else if (n == "svg") out.insert(harness::Format::kSvg);
    else throw ConfigError("unknown report format '" + n + "'");
  }
  return out;
}

int run_matrix(const std::string& manifest, const std::vector<std::string>& formats, const Globals& g) {
  auto fmt = parse_formats(formats);
  auto m = harness::load_manifest(manifest);
  const fs::path out = g.out.empty() ? fs::path("runs") / fs::path(manifest).stem() : fs::path(g.out);
  harness::RunOptions opts;
  opts.parallelism = g.parallelism;
  if (g.seed_given) opts.seed = g.seed;
  opts.precision = precision_of(g);
  opts.log = log_line;
  auto report = harness::run_matrix(m, out, opts);
  bool any_ok = false;
  for (const auto& c : report.cells) any_ok = any_ok || c.ok;
  if (!any_ok) fmt.erase(harness::Format::kSvg);
  harness::emit_report(report, out, fmt);
  std::cout << harness::report_csv(report);
  if (report.failures()) {
    log_line(std::to_string(report.failures()) + " of " + std::to_string(report.cells.size()) + " cells failed");
    return kCellFailure;
  }
  return kOk;
}

int run_report(const std::string& dir, const std::vector<std::string>& formats, const Globals& g) {
  auto fmt = parse_formats(formats);
  if (!fs::is_directory(dir)) throw ConfigError(dir + " is not a run directory");
  auto report = harness::load_report(dir);
  bool any_ok = false;
  for (const auto& c : report.cells) any_ok = any_ok || c.ok;
  if (!any_ok) fmt.erase(harness::Format::kSvg);
  harness::emit_report(report, g.out.empty() ? fs::path(dir) : fs::path(g.out), fmt);
  std::cout << harness::report_csv(report);
  return report.failures() ? kCellFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lookback-length experiments for transformer forecasters"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed = app.add_option("--seed", g.seed, "Seed for initialization, shuffling and dropout")
                   ->default_val(2021);
  app.add_option("--precision", g.precision, "Override the stored or configured precision")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--parallelism", g.parallelism, "Cells run concurrently (one process each)")
      ->default_val(1)
      ->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Load, split and standardize a dataset");
  ingest_cmd->add_option("dataset", ingest.source, "CSV path or synthetic:<periodic|sine_noise|hourly_load>")
      ->required();
  ingest_cmd->add_option("--date-column", ingest.date_column);
  ingest_cmd->add_option("--rows", ingest.rows, "Keep the leading rows (0 keeps all)");
  ingest_cmd->add_option("--channels", ingest.channels, "Synthetic channel count");
  ingest_cmd->add_option("--period", ingest.period, "Synthetic period");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one manifest cell");
  train_cmd->add_option("spec", train.manifest, "Manifest file")->required();
  train_cmd->add_option("--cell", train.cell, "Cell name (optional for single-cell manifests)");

  CheckpointArgs ckpt;
  auto* eval_cmd = app.add_subcommand("evaluate", "Recompute errors from a checkpoint");
  eval_cmd->add_option("checkpoint", ckpt.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ckpt.split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* probe_cmd = app.add_subcommand("probe", "Attention entropy of a checkpoint");
  probe_cmd->add_option("checkpoint", ckpt.checkpoint)->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--split", ckpt.split)->check(CLI::IsMember({"train", "val", "test"}));
  probe_cmd->add_option("--samples", ckpt.samples)->check(CLI::PositiveNumber);
  probe_cmd->add_option("--temperature", ckpt.temperature)->check(CLI::PositiveNumber);

  std::string manifest, report_dir;
  std::vector<std::string> formats{"csv", "json", "svg"};
  auto* matrix_cmd = app.add_subcommand("matrix", "Run every cell of a manifest and write the report");
  matrix_cmd->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  matrix_cmd->add_option("--format", formats)->delimiter(',');

  auto* report_cmd = app.add_subcommand("report", "Rebuild the report of a matrix run directory");
  report_cmd->add_option("dir", report_dir)->required();
  report_cmd->add_option("--format", formats)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  g.seed_given = seed->count() > 0;

  try {
    if (*ingest_cmd) return run_ingest(ingest, g);
    if (*train_cmd) return run_train(train, g);
    if (*eval_cmd) return run_evaluate(ckpt, g);
    if (*probe_cmd) return run_probe(ckpt, g);
    if (*matrix_cmd) return run_matrix(manifest, formats, g);
    if (*report_cmd) return run_report(report_dir, formats, g);
  } catch (const ConfigError& e) {
    log_line(std::string("config error: ") + e.what());
    return kConfig;
  } catch (const ParseError& e) {
    log_line(std::string("parse error: ") + e.what());
    return kConfig;
  } catch (const IoError& e) {
    log_line(std::string("i/o error: ") + e.what());
    return kConfig;
  } catch (const std::exception& e) {
    log_line(std::string("failed: ") + e.what());
    return kCellFailure;
  }
  return kConfig;
}
