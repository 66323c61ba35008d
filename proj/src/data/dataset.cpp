#include "ctxscale/data/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ctxscale::data {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '"')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '"' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                        : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

SplitBounds split_for(std::size_t length) {
  // floor(0.6 T) and floor(0.8 T) in exact integer arithmetic.
  return {length * 6 / 10, length * 8 / 10};
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

TimeSeriesDataset::TimeSeriesDataset(std::vector<std::string> channel_names, std::vector<double> values)
    : channel_names_(std::move(channel_names)) {
  if (channel_names_.empty()) throw ConfigError("dataset needs at least one channel");
  if (values.size() % channel_names_.size() != 0) {
    throw DimensionError("value count " + std::to_string(values.size()) + " is not a multiple of " +
                         std::to_string(channel_names_.size()) + " channels");
  }
  length_ = values.size() / channel_names_.size();
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
  bounds_ = split_for(length_);
}

std::size_t TimeSeriesDataset::split_begin(Split split) const {
  switch (split) {
    case Split::kTrain:
      return 0;
    case Split::kVal:
      return bounds_.train_end;
    case Split::kTest:
      return bounds_.val_end;
  }
  return 0;
}

std::size_t TimeSeriesDataset::split_end(Split split) const {
  switch (split) {
    case Split::kTrain:
      return bounds_.train_end;
    case Split::kVal:
      return bounds_.val_end;
    case Split::kTest:
      return length_;
  }
  return length_;
}

const Scaler& TimeSeriesDataset::scaler() const {
  if (!scaler_) throw ContractError("dataset '" + name + "' has no fitted scaler");
  return *scaler_;
}

MatrixView TimeSeriesDataset::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > length_) {
    throw DimensionError("rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside series of length " +
                         std::to_string(length_));
  }
  const std::size_t c = channels();
  return {std::span<const double>(*values_).subspan(begin * c, (end - begin) * c), end - begin, c};
}

TimeSeriesDataset load_csv(const std::filesystem::path& path, const std::string& date_column,
                           std::size_t max_rows) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  auto header = split_fields(line);
  std::size_t date_idx = header.size();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == date_column) {
      date_idx = i;
    } else {
      names.push_back(header[i]);
    }
  }
  if (date_idx == header.size()) {
    throw ParseError(path.string() + ": no date column '" + date_column + "' in header");
  }
  if (names.empty()) throw ParseError(path.string() + ": no numeric channels");

  std::vector<double> values;
  std::vector<std::string> warnings;
  std::string previous_stamp;
  std::size_t line_no = 1;
  std::size_t kept = 0;
  while ((max_rows == 0 || kept < max_rows) && std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                       " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i == date_idx) continue;
      const auto& cell = fields[i];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || std::isnan(v) ||
          std::isinf(v)) {
        throw ParseError(path.string() + ": row " + std::to_string(line_no) + ", column '" + header[i] +
                         "': missing or non-numeric value '" + cell + "'");
      }
      values.push_back(v);
    }
    const auto& stamp = fields[date_idx];
    if (!previous_stamp.empty() && stamp <= previous_stamp) {
      warnings.push_back("row " + std::to_string(line_no) + ": timestamp '" + stamp + "' does not follow '" +
                         previous_stamp + "'");
    }
    previous_stamp = stamp;
    ++kept;
  }
  TimeSeriesDataset ds(std::move(names), std::move(values));
  ds.name = path.stem().string();
  ds.warnings_ = std::move(warnings);
  if (!ds.warnings_.empty()) {
    std::cerr << "warning: " << path.string() << ": " << ds.warnings_.size()
              << " non-monotone timestamp(s); first: " << ds.warnings_.front() << "\n";
  }
  return ds;
}

TimeSeriesDataset fit_transform(const TimeSeriesDataset& ds) {
  if (ds.standardized()) return ds;
  const std::size_t n = ds.bounds().train_end;
  const std::size_t c = ds.channels();
  if (n < 2) throw ConfigError("training split too short to fit a scaler");
  auto scaler = std::make_shared<Scaler>();
  scaler->mean.assign(c, 0.0);
  scaler->std.assign(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    long double total = 0;
    for (std::size_t t = 0; t < n; ++t) total += ds.at(t, ch);
    const double mu = static_cast<double>(total / n);
    long double sq = 0;
    for (std::size_t t = 0; t < n; ++t) sq += (ds.at(t, ch) - mu) * static_cast<long double>(ds.at(t, ch) - mu);
    const double sd = std::sqrt(static_cast<double>(sq / n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mu)))) {
      throw ConfigError("channel '" + ds.channel_names()[ch] + "' has zero variance on the training split");
    }
    scaler->mean[ch] = mu;
    scaler->std[ch] = sd;
  }
  std::vector<double> z(ds.values().size());
  for (std::size_t t = 0; t < ds.length(); ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) z[t * c + ch] = scaler->transform(ch, ds.at(t, ch));
  }
  TimeSeriesDataset out(ds.channel_names(), std::move(z));
  out.name = ds.name;
  out.warnings_ = ds.warnings_;
  out.scaler_ = std::move(scaler);
  return out;
}

std::vector<double> inverse_transform(const TimeSeriesDataset& ds, std::span<const double> standardized) {
  const auto& scaler = ds.scaler();
  const std::size_t c = ds.channels();
  if (standardized.size() % c != 0) {
    throw DimensionError("inverse_transform: " + std::to_string(standardized.size()) + " values for " +
                         std::to_string(c) + " channels");
  }
  std::vector<double> out(standardized.size());
  for (std::size_t i = 0; i < standardized.size(); ++i) out[i] = scaler.inverse(i % c, standardized[i]);
  return out;
}

WindowSample::WindowSample(const TimeSeriesDataset& ds, std::size_t origin, std::size_t lookback,
                           std::size_t horizon, std::size_t label_len)
    : values_(ds.shared_values()),
      channels_(ds.channels()),
      origin_(origin),
      lookback_len_(lookback),
      horizon_(horizon),
      label_len_(label_len) {
  if (label_len > lookback) {
    throw ConfigError("label_len " + std::to_string(label_len) + " exceeds lookback " + std::to_string(lookback));
  }
  if (origin < lookback || origin + horizon > ds.length()) {
    throw ConfigError("window at origin " + std::to_string(origin) + " does not fit in series of length " +
                      std::to_string(ds.length()));
  }
}

OriginRange window_origins(const TimeSeriesDataset& ds, Split split, std::size_t lookback, std::size_t horizon) {
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  const std::size_t begin = ds.split_begin(split);
  const std::size_t end = ds.split_end(split);
  const std::size_t first = std::max(begin, lookback);
  if (end < horizon || first > end - horizon) {
    const long long max_lookback = static_cast<long long>(end) - static_cast<long long>(horizon);
    throw ConfigError(std::string("lookback ") + std::to_string(lookback) + " with horizon " +
                      std::to_string(horizon) + " leaves no " + to_string(split) +
                      " windows; max feasible lookback is " + std::to_string(std::max(0LL, max_lookback)));
  }
  return {first, end - horizon};
}

std::vector<WindowSample> make_windows(const TimeSeriesDataset& ds, Split split, std::size_t lookback,
                                       std::size_t horizon, std::size_t label_len, std::size_t step) {
  if (step == 0) throw ConfigError("window step must be positive");
  auto range = window_origins(ds, split, lookback, horizon);
  std::vector<WindowSample> out;
  out.reserve(range.count() / step + 1);
  for (std::size_t o = range.first; o <= range.last; o += step) out.emplace_back(ds, o, lookback, horizon, label_len);
  return out;
}

}  // namespace ctxscale::data
