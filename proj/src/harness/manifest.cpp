#include "ctxscale/harness/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "ctxscale/errors.hpp"

namespace ctxscale::harness {

namespace {

using Section = std::map<std::string, std::pair<std::string, std::size_t>>;  // key -> (value, line)

const std::vector<std::string> kModelKeys = {
    "seq_len",   "pred_len",    "label_len", "d_model",          "n_heads",          "e_layers",
    "d_layers",  "d_ff",        "dropout",   "patch_len",        "stride",           "revin",
    "top_k",     "temperature", "retrieval_window", "retrieval_stride", "channel_independent_retrieval",
    "layer_norm_eps", "revin_eps"};
const std::vector<std::string> kTrainKeys = {"learning_rate", "batch_size", "epochs", "patience", "seed",
                                             "schedule", "micro_batch", "max_batches_per_epoch"};
const std::vector<std::string> kCellKeys = {"model",         "dataset",    "precision", "probe_entropy",
                                            "probe_samples", "train_step", "val_step",  "test_step",
                                            "seeds"};
const std::set<std::string> kDatasetKeys = {"path", "date_column", "rows", "generator", "channels", "seed", "period"};

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool contains(const std::vector<std::string>& keys, const std::string& k) {
  return std::find(keys.begin(), keys.end(), k) != keys.end();
}

nlohmann::json typed(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  if (!v.empty() && std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return std::stoull(v);
  }
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  return v;
}

std::size_t as_count(const std::string& key, const std::pair<std::string, std::size_t>& entry) {
  auto j = typed(entry.first);
  if (!j.is_number_unsigned()) {
    throw ConfigError("line " + std::to_string(entry.second) + ": " + key + " must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

bool as_bool(const std::string& key, const std::pair<std::string, std::size_t>& entry) {
  auto j = typed(entry.first);
  if (!j.is_boolean()) throw ConfigError("line " + std::to_string(entry.second) + ": " + key + " must be true or false");
  return j.get<bool>();
}

DatasetEntry build_dataset(const std::string& name, const Section& sec, const std::filesystem::path& base) {
  DatasetEntry d;
  d.name = name;
  for (const auto& [k, v] : sec) {
    if (!kDatasetKeys.count(k)) {
      throw ConfigError("line " + std::to_string(v.second) + ": unknown dataset key '" + k + "'");
    }
  }
  if (sec.count("rows")) d.rows = as_count("rows", sec.at("rows"));
  if (sec.count("generator")) {
    data::SyntheticSpec s;
    s.kind = data::parse_generator(sec.at("generator").first);
    if (d.rows) s.rows = d.rows;
    if (sec.count("channels")) s.channels = as_count("channels", sec.at("channels"));
    if (sec.count("seed")) s.seed = as_count("seed", sec.at("seed"));
    if (sec.count("period")) s.period = as_count("period", sec.at("period"));
    d.synthetic = s;
    d.rows = s.rows;
  } else {
    if (!sec.count("path")) throw ConfigError("dataset '" + name + "' needs a path or a generator");
    d.path = sec.at("path").first;
    if (d.path.is_relative() && !base.empty()) d.path = (base / d.path).lexically_normal();
    if (sec.count("date_column")) d.date_column = sec.at("date_column").first;
  }
  return d;
}

ExperimentSpec build_cell(const std::string& name, const Section& merged) {
  ExperimentSpec s;
  s.name = name;
  nlohmann::json model = nlohmann::json::object();
  nlohmann::json train = nlohmann::json::object();
  for (const auto& [k, v] : merged) {
    if (contains(kModelKeys, k)) {
      model[k] = typed(v.first);
    } else if (contains(kTrainKeys, k)) {
      train[k] = typed(v.first);
    } else if (!contains(kCellKeys, k)) {
      throw ConfigError("line " + std::to_string(v.second) + ": unknown key '" + k + "' in cell '" + name + "'");
    }
  }
  if (!merged.count("model")) throw ConfigError("cell '" + name + "' has no model");
  if (!merged.count("dataset")) throw ConfigError("cell '" + name + "' has no dataset");
  s.model.kind = models::parse_model_kind(merged.at("model").first);
  s.dataset = merged.at("dataset").first;
  try {
    from_json(model, s.model.vanilla);
    from_json(model, s.model.patch);
    from_json(model, s.model.raft.base);
    from_json(model, s.model.raft);
    from_json(train, s.train);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cell '" + name + "': " + e.what());
  }
  if (merged.count("precision")) s.precision = parse_precision(merged.at("precision").first);
  if (merged.count("probe_entropy")) s.probe_entropy = as_bool("probe_entropy", merged.at("probe_entropy"));
  if (merged.count("probe_samples")) s.probe_samples = as_count("probe_samples", merged.at("probe_samples"));
  if (merged.count("train_step")) s.train_step = as_count("train_step", merged.at("train_step"));
  if (merged.count("val_step")) s.val_step = as_count("val_step", merged.at("val_step"));
  if (merged.count("test_step")) s.test_step = as_count("test_step", merged.at("test_step"));
  return s;
}

}  // namespace

const char* to_string(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32" || name == "float32") return Precision::kF32;
  if (name == "f64" || name == "float64") return Precision::kF64;
  throw ConfigError("unknown precision '" + name + "' (f32, f64)");
}

data::TimeSeriesDataset DatasetEntry::load() const {
  data::TimeSeriesDataset raw = synthetic ? data::synthetic_series(*synthetic) : data::load_csv(path, date_column, rows);
  auto ds = data::fit_transform(raw);
  ds.name = name;
  return ds;
}

void to_json(nlohmann::json& j, const DatasetEntry& d) {
  j = nlohmann::json{{"name", d.name}, {"rows", d.rows}};
  if (d.synthetic) {
    j["generator"] = data::to_string(d.synthetic->kind);
    j["channels"] = d.synthetic->channels;
    j["seed"] = d.synthetic->seed;
    j["period"] = d.synthetic->period;
  } else {
    j["path"] = d.path.string();
    j["date_column"] = d.date_column;
  }
}

void from_json(const nlohmann::json& j, DatasetEntry& d) {
  d = DatasetEntry{};
  d.name = j.at("name").get<std::string>();
  d.rows = j.value("rows", std::size_t{0});
  if (j.contains("generator")) {
    data::SyntheticSpec s;
    s.kind = data::parse_generator(j.at("generator").get<std::string>());
    s.rows = d.rows;
    s.channels = j.at("channels").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.period = j.value("period", s.period);
    d.synthetic = s;
  } else {
    d.path = j.at("path").get<std::string>();
    d.date_column = j.value("date_column", d.date_column);
  }
}

void ExperimentSpec::validate() const {
  if (name.empty()) throw ConfigError("cell without a name");
  model.validate();
  train.validate();
  if (train_step == 0 || val_step == 0 || test_step == 0) throw ConfigError("window steps must be positive");
  if (probe_samples == 0) throw ConfigError("probe_samples must be positive");
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"dataset", s.dataset},
                     {"model", s.model},
                     {"train", s.train},
                     {"precision", to_string(s.precision)},
                     {"probe_entropy", s.probe_entropy},
                     {"probe_samples", s.probe_samples},
                     {"train_step", s.train_step},
                     {"val_step", s.val_step},
                     {"test_step", s.test_step}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s = ExperimentSpec{};
  s.name = j.at("name").get<std::string>();
  s.dataset = j.at("dataset").get<std::string>();
  s.model = j.at("model").get<models::ModelConfig>();
  s.train = j.at("train").get<training::TrainConfig>();
  s.precision = parse_precision(j.value("precision", std::string("f32")));
  s.probe_entropy = j.value("probe_entropy", false);
  s.probe_samples = j.value("probe_samples", s.probe_samples);
  s.train_step = j.value("train_step", s.train_step);
  s.val_step = j.value("val_step", s.val_step);
  s.test_step = j.value("test_step", s.test_step);
}

const DatasetEntry& Manifest::dataset(const std::string& name) const {
  auto it = datasets.find(name);
  if (it == datasets.end()) throw ConfigError("dataset '" + name + "' is not registered in the manifest");
  return it->second;
}

Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  Section defaults;
  std::vector<std::pair<std::string, Section>> datasets, cells;
  Section* current = nullptr;
  std::string line;
  std::size_t number = 0;
  std::set<std::string> seen_sections;
  while (std::getline(in, line)) {
    ++number;
    auto text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("line " + std::to_string(number) + ": unterminated section header");
      auto inner = trim(text.substr(1, text.size() - 2));
      if (!seen_sections.insert(inner).second) {
        throw ConfigError("line " + std::to_string(number) + ": duplicate section [" + inner + "]");
      }
      auto space = inner.find(' ');
      auto kind = inner.substr(0, space);
      auto name = space == std::string::npos ? "" : trim(inner.substr(space + 1));
      if (kind == "defaults" && name.empty()) {
        current = &defaults;
      } else if (kind == "dataset" && !name.empty()) {
        datasets.emplace_back(name, Section{});
        current = &datasets.back().second;
      } else if (kind == "cell" && !name.empty()) {
        cells.emplace_back(name, Section{});
        current = &cells.back().second;
      } else {
        throw ConfigError("line " + std::to_string(number) + ": unknown section [" + inner + "]");
      }
      continue;
    }
    auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    if (!current) throw ConfigError("line " + std::to_string(number) + ": key outside any section");
    auto key = trim(text.substr(0, eq));
    auto value = trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(number) + ": empty key");
    (*current)[key] = {value, number};
  }

  Manifest m;
  for (const auto& [name, sec] : datasets) m.datasets.emplace(name, build_dataset(name, sec, base_dir));
  for (const auto& [k, v] : defaults) {
    if (!contains(kModelKeys, k) && !contains(kTrainKeys, k) && !contains(kCellKeys, k)) {
      throw ConfigError("line " + std::to_string(v.second) + ": unknown key '" + k + "' in [defaults]");
    }
  }
  for (const auto& [name, sec] : cells) {
    Section merged = defaults;
    for (const auto& [k, v] : sec) merged[k] = v;
    std::vector<std::pair<std::string, Section>> expanded;
    for (const Section* level : {static_cast<const Section*>(&defaults), &sec}) {
      if (level->count("seed") && level->count("seeds")) {
        throw ConfigError("line " + std::to_string(level->at("seeds").second) + ": seed and seeds in one section");
      }
    }
    const bool multi = sec.count("seeds") || (defaults.count("seeds") && !sec.count("seed"));
    if (auto it = merged.find("seeds"); it != merged.end()) {
      merged.erase(it);
    }
    if (multi) {
      const auto& [list, line_no] = (sec.count("seeds") ? sec : defaults).at("seeds");
      std::stringstream ss(list);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty entry in seeds");
        Section one = merged;
        one["seed"] = {item, line_no};
        expanded.emplace_back(name + "_s" + item, std::move(one));
      }
    } else {
      expanded.emplace_back(name, merged);
    }
    for (const auto& [cell_name, fields] : expanded) {
      auto spec = build_cell(cell_name, fields);
      m.dataset(spec.dataset);
      spec.validate();
      m.cells.push_back(std::move(spec));
    }
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  return parse_manifest(in, std::filesystem::absolute(path).parent_path());
}

const std::vector<std::string>& cell_keys() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> k = kModelKeys;
    k.insert(k.end(), kTrainKeys.begin(), kTrainKeys.end());
    k.insert(k.end(), kCellKeys.begin(), kCellKeys.end());
    return k;
  }();
  return all;
}

}  // namespace ctxscale::harness
