#include "ctxscale/retrieval/index.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace ctxscale::retrieval {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'R', 'I', 'D', 'X', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ParseError("truncated retrieval index");
  return v;
}

struct Ranked {
  bool valid;
  double similarity;
  std::size_t candidate;
  std::size_t origin;
};

bool ranks_before(const Ranked& a, const Ranked& b) {
  if (a.valid != b.valid) return a.valid;
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.origin < b.origin;
}

}  // namespace

RetrievalIndex RetrievalIndex::build(const data::TimeSeriesDataset& ds, std::size_t window_length,
                                     std::size_t horizon, std::size_t stride) {
  if (window_length == 0 || horizon == 0 || stride == 0) {
    throw ConfigError("retrieval window length, horizon and stride must be positive");
  }
  const std::size_t train_end = ds.bounds().train_end;
  if (window_length + horizon > train_end) {
    throw ConfigError("retrieval window " + std::to_string(window_length) + " + horizon " + std::to_string(horizon) +
                      " exceeds training split of " + std::to_string(train_end) + " rows");
  }
  RetrievalIndex index;
  index.series_ = ds.shared_values();
  index.channels_ = ds.channels();
  index.window_length_ = window_length;
  index.horizon_ = horizon;
  index.stride_ = stride;
  for (std::size_t o = window_length; o + horizon <= train_end; o += stride) index.origins_.push_back(o);
  index.compute_statistics();
  return index;
}

void RetrievalIndex::compute_statistics() {
  const std::size_t n = origins_.size();
  const std::size_t c = channels_;
  means_.assign(n * c, 0.0);
  channel_norms_.assign(n * c, 0.0);
  norms_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = window(i);
    for (std::size_t ch = 0; ch < c; ++ch) {
      long double total = 0;
      for (std::size_t t = 0; t < window_length_; ++t) total += w(t, ch);
      const double mu = static_cast<double>(total / window_length_);
      long double sq = 0;
      for (std::size_t t = 0; t < window_length_; ++t) {
        const long double d = static_cast<long double>(w(t, ch)) - mu;
        sq += d * d;
      }
      means_[i * c + ch] = mu;
      channel_norms_[i * c + ch] = std::sqrt(static_cast<double>(sq));
    }
    double sq_all = 0;
    for (std::size_t ch = 0; ch < c; ++ch) sq_all += channel_norms_[i * c + ch] * channel_norms_[i * c + ch];
    norms_[i] = std::sqrt(sq_all);
  }
}

MatrixView RetrievalIndex::rows(std::size_t begin, std::size_t end) const {
  return {std::span<const double>(*series_).subspan(begin * channels_, (end - begin) * channels_), end - begin,
          channels_};
}

MatrixView RetrievalIndex::window(std::size_t i) const { return rows(origins_[i] - window_length_, origins_[i]); }

MatrixView RetrievalIndex::future(std::size_t i) const { return rows(origins_[i], origins_[i] + horizon_); }

std::span<const double> RetrievalIndex::window_mean(std::size_t i) const {
  return std::span<const double>(means_).subspan(i * channels_, channels_);
}

double RetrievalIndex::centered_norm(std::size_t i) const { return norms_[i]; }

double RetrievalIndex::centered_norm(std::size_t i, std::size_t channel) const {
  return channel_norms_[i * channels_ + channel];
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u64(out, window_length_);
  write_u64(out, horizon_);
  write_u64(out, channels_);
  write_u64(out, stride_);
  write_u64(out, origins_.size());
  for (std::size_t i = 0; i < origins_.size(); ++i) {
    write_u64(out, origins_[i]);
    auto block = rows(origins_[i] - window_length_, origins_[i] + horizon_);
    out.write(reinterpret_cast<const char*>(block.data.data()),
              static_cast<std::streamsize>(block.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw ParseError(path.string() + ": not a retrieval index");
  RetrievalIndex index;
  index.window_length_ = read_u64(in);
  index.horizon_ = read_u64(in);
  index.channels_ = read_u64(in);
  index.stride_ = read_u64(in);
  const std::size_t count = read_u64(in);
  const std::size_t span = index.window_length_ + index.horizon_;
  const std::size_t c = index.channels_;
  if (c == 0 || span == 0) throw ParseError(path.string() + ": empty candidate shape");

  std::vector<double> series;
  std::vector<char> filled;
  std::vector<double> block(span * c);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t origin = read_u64(in);
    if (origin < index.window_length_) throw ParseError(path.string() + ": candidate origin before window start");
    in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size() * sizeof(double)));
    if (!in) throw ParseError("truncated retrieval index");
    const std::size_t first_row = origin - index.window_length_;
    if ((first_row + span) * c > series.size()) {
      series.resize((first_row + span) * c, 0.0);
      filled.resize(first_row + span, 0);
    }
    for (std::size_t r = 0; r < span; ++r) {
      double* dst = series.data() + (first_row + r) * c;
      const double* src = block.data() + r * c;
      if (filled[first_row + r] && std::memcmp(dst, src, c * sizeof(double)) != 0) {
        throw ParseError(path.string() + ": overlapping candidates disagree at row " + std::to_string(first_row + r));
      }
      std::memcpy(dst, src, c * sizeof(double));
      filled[first_row + r] = 1;
    }
    index.origins_.push_back(origin);
  }
  index.series_ = std::make_shared<const std::vector<double>>(std::move(series));
  index.compute_statistics();
  return index;
}

bool is_eligible(const RetrievalIndex& index, std::size_t candidate, std::size_t query_origin, Eligibility rule) {
  const std::size_t origin = index.origin(candidate);
  switch (rule) {
    case Eligibility::kStrictPast:
      return query_origin >= index.window_length() &&
             origin + index.horizon() <= query_origin - index.window_length();
    case Eligibility::kFutureOnly:
      return origin >= query_origin;
  }
  return false;
}

RetrievedSet cosine_topk(const RetrievalIndex& index, const MatrixView& query, std::size_t query_origin,
                         const QueryOptions& options) {
  const std::size_t m = index.window_length();
  const std::size_t c = index.channels();
  if (query.rows != m || query.cols != c) {
    throw DimensionError("query is " + std::to_string(query.rows) + "x" + std::to_string(query.cols) +
                         ", index expects " + std::to_string(m) + "x" + std::to_string(c));
  }
  if (options.k == 0) throw ContractError("cosine_topk needs k >= 1");
  if (options.channel && *options.channel >= c) throw ContractError("query channel out of range");

  // Centered query against raw candidates; candidate means drop out.
  std::vector<double> centered(query.data.begin(), query.data.end());
  for (std::size_t ch = 0; ch < c; ++ch) {
    long double total = 0;
    for (std::size_t t = 0; t < m; ++t) total += query(t, ch);
    const double mu = static_cast<double>(total / m);
    for (std::size_t t = 0; t < m; ++t) centered[t * c + ch] -= mu;
  }
  using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1>;
  using Strided = Eigen::Map<const Vec, 0, Eigen::InnerStride<>>;
  const auto len = static_cast<Eigen::Index>(options.channel ? m : m * c);
  const Eigen::Index step = options.channel ? static_cast<Eigen::Index>(c) : 1;
  const std::size_t offset = options.channel ? *options.channel : 0;
  Strided q(centered.data() + offset, len, Eigen::InnerStride<>(step));
  const double q_norm = q.norm();

  std::vector<Ranked> ranked;
  ranked.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (!is_eligible(index, i, query_origin, options.eligibility)) continue;
    const double w_norm = options.channel ? index.centered_norm(i, *options.channel) : index.centered_norm(i);
    Ranked r{false, 0.0, i, index.origin(i)};
    if (q_norm > 0.0 && w_norm > 0.0) {
      Strided w(index.window(i).data.data() + offset, len, Eigen::InnerStride<>(step));
      r.valid = true;
      r.similarity = std::clamp(q.dot(w) / (q_norm * w_norm), -1.0, 1.0);
    }
    ranked.push_back(r);
  }
  RetrievedSet out;
  out.channel = options.channel;
  out.eligible = ranked.size();
  const std::size_t take = std::min(options.k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), ranks_before);
  for (std::size_t j = 0; j < take; ++j) {
    const auto& r = ranked[j];
    out.segments.push_back({r.origin, r.similarity, index.window(r.candidate), index.future(r.candidate)});
  }
  return out;
}

std::vector<double> similarity_weights(const RetrievedSet& set, double temperature) {
  if (set.empty()) throw ContractError("aggregate_futures on an empty retrieved set");
  if (!(temperature > 0.0)) throw ContractError("aggregation temperature must be positive");
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : set.segments) hi = std::max(hi, s.similarity / temperature);
  std::vector<double> w;
  double total = 0;
  for (const auto& s : set.segments) {
    w.push_back(std::exp(s.similarity / temperature - hi));
    total += w.back();
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<double> aggregate_futures(const RetrievedSet& set, double temperature) {
  auto weights = similarity_weights(set, temperature);
  const auto& first = set.segments.front().future;
  std::vector<double> out(first.data.size(), 0.0);
  for (std::size_t j = 0; j < set.segments.size(); ++j) {
    const auto& f = set.segments[j].future;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[j] * f.data[i];
  }
  if (set.segments.size() == 1) {
    std::copy(first.data.begin(), first.data.end(), out.begin());
  }
  return out;
}

}  // namespace ctxscale::retrieval
