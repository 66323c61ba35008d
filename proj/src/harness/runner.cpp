#include "ctxscale/harness/runner.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ctxscale/errors.hpp"
#include "ctxscale/models/checkpoint.hpp"

namespace ctxscale::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void set_channels(models::ModelConfig& cfg, std::size_t channels) {
  cfg.vanilla.channels = channels;
  cfg.patch.channels = channels;
  cfg.raft.base.channels = channels;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

template <typename T>
CellOutcome run_typed(const ExperimentSpec& spec, const DatasetEntry& entry, const data::TimeSeriesDataset& ds,
                      const fs::path& dir, const Logger& log) {
  auto cfg = spec.model;
  set_channels(cfg, ds.channels());
  cfg.validate();
  const std::size_t L = cfg.lookback(), H = cfg.horizon();
  const std::size_t label = cfg.kind == models::ModelKind::kVanilla ? cfg.vanilla.label_len : 0;
  auto tr = data::make_windows(ds, data::Split::kTrain, L, H, label, spec.train_step);
  auto va = data::make_windows(ds, data::Split::kVal, L, H, label, spec.val_step);
  auto te = data::make_windows(ds, data::Split::kTest, L, H, label, spec.test_step);
  if (tr.empty() || va.empty() || te.empty()) {
    throw ConfigError("lookback " + std::to_string(L) + " leaves an empty split on " + spec.dataset);
  }
  std::shared_ptr<const retrieval::RetrievalIndex> index;
  if (cfg.kind == models::ModelKind::kRaft) {
    index = std::make_shared<const retrieval::RetrievalIndex>(
        retrieval::RetrievalIndex::build(ds, cfg.raft.key_length(), H, cfg.raft.retrieval_stride));
  }
  auto model = models::make_forecaster<T>(cfg, spec.train.seed, index);
  say(log, spec.name + ": " + std::to_string(tr.size()) + " train / " + std::to_string(va.size()) + " val / " +
               std::to_string(te.size()) + " test windows, " + std::to_string(model->parameters().scalar_count()) +
               " parameters");

  auto record = training::train(*model, tr, va, spec.train, [&](const training::EpochRecord& e) {
    std::ostringstream s;
    s << spec.name << ": epoch " << e.epoch << " lr " << e.learning_rate << " train " << e.train_loss << " val "
      << e.val_loss << " (" << e.seconds << " s)";
    say(log, s.str());
  });
  record.checkpoint = "model.ckpt";
  json extra{{"cell", spec}, {"dataset", entry}};
  models::save_checkpoint(dir / "model.ckpt", *model, extra);
  write_json(dir / "train_record.json", record);

  const std::size_t eval_batch = spec.train.micro_batch ? spec.train.micro_batch : spec.train.batch_size;
  auto eval = training::evaluate(*model, te, eval_batch);

  CellOutcome out;
  out.name = spec.name;
  out.ok = true;
  out.precision = to_string(spec.precision);
  out.result = {models::to_string(cfg.kind), spec.dataset, L, H, eval.mse, eval.mae, record.wall_seconds,
                spec.train.seed};
  out.persistence_mse = training::persistence_baseline(te).mse;
  out.train = record;
  if (spec.probe_entropy && model->records_attention()) {
    out.entropy = diagnostics::probe(*model, te, L, spec.probe_samples);
  }
  return out;
}

CellOutcome failed(const ExperimentSpec& spec, const std::string& error) {
  CellOutcome out;
  out.name = spec.name;
  out.ok = false;
  out.error = error;
  out.precision = to_string(spec.precision);
  out.result.model = models::to_string(spec.model.kind);
  out.result.dataset = spec.dataset;
  out.result.lookback = spec.lookback();
  out.result.horizon = spec.horizon();
  out.result.seed = spec.train.seed;
  return out;
}

std::optional<CellOutcome> completed(const fs::path& dir, const ExperimentSpec& spec) {
  const auto path = dir / "result.json";
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto j = read_json(path);
    if (!j.value("ok", false) || j.value("spec", json()) != json(spec)) return std::nullopt;
    auto out = j.get<CellOutcome>();
    out.resumed = true;
    return out;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void to_json(json& j, const CellOutcome& c) {
  const auto& r = c.result;
  j = json{{"name", c.name},
           {"ok", c.ok},
           {"error", c.error},
           {"precision", c.precision},
           {"result",
            {{"model", r.model},
             {"dataset", r.dataset},
             {"lookback", r.lookback},
             {"horizon", r.horizon},
             {"mse", r.mse},
             {"mae", r.mae},
             {"train_seconds", r.train_seconds},
             {"seed", r.seed}}},
           {"persistence_mse", c.persistence_mse}};
  if (c.train) j["train"] = *c.train;
  if (c.entropy) j["entropy"] = *c.entropy;
}

void from_json(const json& j, CellOutcome& c) {
  c = CellOutcome{};
  c.name = j.at("name").get<std::string>();
  c.ok = j.at("ok").get<bool>();
  c.error = j.value("error", "");
  c.precision = j.value("precision", "");
  const auto& r = j.at("result");
  c.result.model = r.at("model").get<std::string>();
  c.result.dataset = r.at("dataset").get<std::string>();
  c.result.lookback = r.at("lookback").get<std::size_t>();
  c.result.horizon = r.at("horizon").get<std::size_t>();
  c.result.mse = r.at("mse").get<double>();
  c.result.mae = r.at("mae").get<double>();
  c.result.train_seconds = r.at("train_seconds").get<double>();
  c.result.seed = r.at("seed").get<std::uint64_t>();
  c.persistence_mse = j.value("persistence_mse", 0.0);
  if (j.contains("train")) c.train = j.at("train").get<training::TrainRecord>();
  if (j.contains("entropy")) c.entropy = j.at("entropy").get<diagnostics::AttentionStats>();
}

std::size_t ExperimentReport::failures() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; }));
}

CellOutcome run_cell(const ExperimentSpec& spec, const DatasetEntry& dataset, const fs::path& cell_dir,
                     const Logger& log) {
  CellOutcome out;
  try {
    fs::create_directories(cell_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + cell_dir.string() + ": " + e.what());
  }
  try {
    spec.validate();
    auto ds = dataset.load();
    out = spec.precision == Precision::kF64 ? run_typed<double>(spec, dataset, ds, cell_dir, log)
                                            : run_typed<float>(spec, dataset, ds, cell_dir, log);
    say(log, spec.name + ": test MSE " + number(out.result.mse) + ", MAE " + number(out.result.mae));
  } catch (const std::exception& e) {
    out = failed(spec, e.what());
    say(log, spec.name + ": FAILED: " + e.what());
  }
  json j = out;
  j["spec"] = spec;
  write_json(cell_dir / "result.json", j);
  return out;
}

ExperimentReport run_matrix(const Manifest& manifest, const fs::path& out, const RunOptions& options) {
  std::vector<ExperimentSpec> specs = manifest.cells;
  for (auto& s : specs) {
    if (options.seed) s.train.seed = *options.seed;
    if (options.precision) s.precision = *options.precision;
  }
  try {
    fs::create_directories(out / "cells");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + (out / "cells").string() + ": " + e.what());
  }
  json order = json::array();
  for (const auto& s : specs) order.push_back(s.name);
  write_json(out / "matrix.json", json{{"cells", order}});

  std::vector<std::optional<CellOutcome>> results(specs.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    results[i] = completed(out / "cells" / specs[i].name, specs[i]);
    if (results[i]) {
      say(options.log, specs[i].name + ": already complete, skipping");
    } else {
      pending.push_back(i);
    }
  }

  if (options.parallelism <= 1 || pending.size() <= 1) {
    for (auto i : pending) {
      const auto& s = specs[i];
      results[i] = run_cell(s, manifest.dataset(s.dataset), out / "cells" / s.name, options.log);
    }
  } else {
    std::map<pid_t, std::size_t> running;
    std::map<std::size_t, int> status;
    auto reap = [&] {
      int st = 0;
      pid_t pid = ::wait(&st);
      if (pid > 0 && running.count(pid)) {
        status[running[pid]] = st;
        running.erase(pid);
      }
    };
    for (auto i : pending) {
      while (running.size() >= options.parallelism) reap();
      std::fflush(nullptr);
      pid_t pid = ::fork();
      if (pid < 0) throw IoError("fork failed");
      if (pid == 0) {
        int code = 0;
        try {
          const auto& s = specs[i];
          run_cell(s, manifest.dataset(s.dataset), out / "cells" / s.name, options.log);
        } catch (...) {
          code = 1;
        }
        std::fflush(nullptr);
        ::_exit(code);
      }
      running[pid] = i;
    }
    while (!running.empty()) reap();
    for (auto i : pending) {
      const auto path = out / "cells" / specs[i].name / "result.json";
      try {
        auto j = read_json(path);
        results[i] = j.get<CellOutcome>();
      } catch (const std::exception&) {
        results[i] = failed(specs[i], "cell process ended with status " + std::to_string(status[i]) +
                                          " without writing a result");
      }
    }
  }

  ExperimentReport report;
  for (auto& r : results) report.cells.push_back(std::move(*r));
  report.degradation = degradation_table(report.cells);
  report.literature = default_literature();
  return report;
}

std::vector<DegradationRow> degradation_table(const std::vector<CellOutcome>& cells) {
  std::map<std::tuple<std::string, std::string, std::size_t>, std::map<std::size_t, const CellOutcome*>> groups;
  std::vector<std::tuple<std::string, std::string, std::size_t>> order;
  for (const auto& c : cells) {
    if (!c.ok) continue;
    auto key = std::make_tuple(c.result.model, c.result.dataset, c.result.horizon);
    if (!groups.count(key)) order.push_back(key);
    groups[key].emplace(c.result.lookback, &c);
  }
  std::vector<DegradationRow> rows;
  for (const auto& key : order) {
    const auto& by_l = groups[key];
    if (by_l.size() < 2) continue;
    const auto* base = by_l.begin()->second;
    if (!(base->result.mse > 0.0)) continue;
    for (auto it = std::next(by_l.begin()); it != by_l.end(); ++it) {
      const auto* ext = it->second;
      rows.push_back({base->result.model, base->result.dataset, base->result.horizon, base->name, ext->name,
                      base->result.lookback, ext->result.lookback, base->result.mse, ext->result.mse,
                      metrics::degradation(base->result.mse, ext->result.mse)});
    }
  }
  return rows;
}

std::vector<LiteratureRow> load_literature(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot read " + csv.string());
  std::vector<LiteratureRow> rows;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string model, context, mse, mae;
    if (!std::getline(ss, model, ',') || !std::getline(ss, context, ',') || !std::getline(ss, mse, ',') ||
        !std::getline(ss, mae, ',')) {
      throw ParseError(csv.string() + ": malformed row '" + line + "'");
    }
    rows.push_back({model, std::stoul(context), std::stod(mse), std::stod(mae)});
  }
  return rows;
}

std::vector<LiteratureRow> default_literature() {
  const fs::path bundled = CTXSCALE_LITERATURE_CSV;
  if (!fs::exists(bundled)) return {};
  return load_literature(bundled);
}

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "cell,model,dataset,lookback,horizon,precision,seed,status,mse,mae,persistence_mse,entropy,train_seconds\n";
  for (const auto& c : report.cells) {
    const auto& r = c.result;
    out << c.name << ',' << r.model << ',' << r.dataset << ',' << r.lookback << ',' << r.horizon << ','
        << c.precision << ',' << r.seed << ',' << (c.ok ? "ok" : "failed") << ',';
    if (c.ok) {
      out << number(r.mse) << ',' << number(r.mae) << ',' << number(c.persistence_mse) << ','
          << (c.entropy ? number(c.entropy->entropy) : "") << ',' << number(r.train_seconds);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  return out.str();
}

json report_json(const ExperimentReport& report) {
  json j{{"cells", report.cells},
         {"failures", report.failures()},
         {"degradation", json::array()},
         {"entropy", json::array()},
         {"literature", json::array()}};
  for (const auto& d : report.degradation) {
    j["degradation"].push_back({{"model", d.model},
                                {"dataset", d.dataset},
                                {"horizon", d.horizon},
                                {"base_cell", d.base_cell},
                                {"extended_cell", d.extended_cell},
                                {"base_lookback", d.base_lookback},
                                {"extended_lookback", d.extended_lookback},
                                {"base_mse", d.base_mse},
                                {"extended_mse", d.extended_mse},
                                {"percent", d.percent}});
  }
  for (const auto& c : report.cells) {
    if (!c.entropy) continue;
    j["entropy"].push_back({{"cell", c.name},
                            {"model", c.result.model},
                            {"dataset", c.result.dataset},
                            {"lookback", c.result.lookback},
                            {"normalized_entropy", c.entropy->entropy},
                            {"effective_rank", c.entropy->effective_rank},
                            {"keys", c.entropy->keys}});
  }
  for (const auto& l : report.literature) {
    j["literature"].push_back(
        {{"model", l.model}, {"context", l.context}, {"mse", l.mse}, {"mae", l.mae}, {"source", "literature value"}});
  }
  return j;
}

ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  r.cells = j.at("cells").get<std::vector<CellOutcome>>();
  for (const auto& d : j.at("degradation")) {
    r.degradation.push_back({d.at("model").get<std::string>(), d.at("dataset").get<std::string>(),
                             d.at("horizon").get<std::size_t>(), d.at("base_cell").get<std::string>(),
                             d.at("extended_cell").get<std::string>(), d.at("base_lookback").get<std::size_t>(),
                             d.at("extended_lookback").get<std::size_t>(), d.at("base_mse").get<double>(),
                             d.at("extended_mse").get<double>(), d.at("percent").get<double>()});
  }
  for (const auto& l : j.at("literature")) {
    r.literature.push_back({l.at("model").get<std::string>(), l.at("context").get<std::size_t>(),
                            l.at("mse").get<double>(), l.at("mae").get<double>()});
  }
  return r;
}

std::string report_svg(const ExperimentReport& report) {
  // series label -> lookback -> mse
  std::map<std::string, std::map<std::size_t, double>> series;
  std::set<std::pair<std::string, std::size_t>> groups;
  for (const auto& c : report.cells) {
    if (c.ok) groups.emplace(c.result.dataset, c.result.horizon);
  }
  for (const auto& c : report.cells) {
    if (!c.ok) continue;
    std::string label = c.result.model;
    if (groups.size() > 1) label += " " + c.result.dataset + " H=" + std::to_string(c.result.horizon);
    series[label].emplace(c.result.lookback, c.result.mse);
  }
  if (series.empty()) throw ContractError("no successful cells to chart");

  double x_lo = 1e300, x_hi = -1e300, y_hi = 0.0;
  std::set<std::size_t> ticks;
  for (const auto& [label, pts] : series) {
    for (const auto& [l, m] : pts) {
      x_lo = std::min(x_lo, static_cast<double>(l));
      x_hi = std::max(x_hi, static_cast<double>(l));
      y_hi = std::max(y_hi, m);
      ticks.insert(l);
    }
  }
  if (x_hi == x_lo) {
    x_lo -= 1;
    x_hi += 1;
  }
  y_hi = y_hi > 0 ? y_hi * 1.1 : 1.0;
  const double W = 720, Hh = 440, left = 70, right = 200, top = 40, bottom = 60;
  const double pw = W - left - right, ph = Hh - top - bottom;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return top + ph - y / y_hi * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Test MSE vs lookback</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  for (auto t : ticks) {
    s << "<text x=\"" << px(static_cast<double>(t)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << t
      << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double v = y_hi * i / 5.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    s << "<text x=\"" << left - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << py(v) << "\" x2=\"" << left + pw << "\" y2=\"" << py(v)
      << "\" stroke=\"#ddd\"/>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << Hh - 15 << "\" text-anchor=\"middle\">lookback L</text>\n";
  s << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">MSE</text>\n";
  std::size_t k = 0;
  for (const auto& [label, pts] : series) {
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    s << "<polyline class=\"series\" data-model=\"" << escape_xml(label) << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& [l, m] : pts) {
      s << (first ? "" : " ") << px(static_cast<double>(l)) << ',' << py(m);
      first = false;
    }
    s << "\"/>\n";
    for (const auto& [l, m] : pts) {
      s << "<circle cx=\"" << px(static_cast<double>(l)) << "\" cy=\"" << py(m) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << escape_xml(label) << "</text>\n";
    ++k;
  }
  s << "</svg>\n";
  return s.str();
}

void emit_report(const ExperimentReport& report, const fs::path& dir, const std::set<Format>& formats) {
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + dir.string() + ": " + e.what());
  }
  auto write = [&](const fs::path& name, const std::string& body) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << body;
    if (!out) throw IoError("failed writing " + (dir / name).string());
  };
  if (formats.count(Format::kCsv)) write("cells.csv", report_csv(report));
  if (formats.count(Format::kJson)) write("report.json", report_json(report).dump(2) + "\n");
  if (formats.count(Format::kSvg)) write("mse_vs_lookback.svg", report_svg(report));
}

ExperimentReport load_report(const fs::path& dir) {
  const auto cells_dir = dir / "cells";
  if (!fs::is_directory(cells_dir)) throw IoError("no cells directory under " + dir.string());
  std::vector<std::string> names;
  if (fs::exists(dir / "matrix.json")) {
    names = read_json(dir / "matrix.json").at("cells").get<std::vector<std::string>>();
  } else {
    for (const auto& e : fs::directory_iterator(cells_dir)) {
      if (e.is_directory()) names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
  }
  ExperimentReport report;
  for (const auto& n : names) {
    const auto path = cells_dir / n / "result.json";
    if (!fs::exists(path)) continue;
    report.cells.push_back(read_json(path).get<CellOutcome>());
  }
  report.degradation = degradation_table(report.cells);
  report.literature = default_literature();
  return report;
}

}  // namespace ctxscale::harness
