#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ctxscale/retrieval/index.hpp"

using namespace ctxscale;
using namespace ctxscale::retrieval;
using data::TimeSeriesDataset;

namespace {

TimeSeriesDataset random_series(std::size_t length, std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) names.push_back("c" + std::to_string(c));
  std::vector<double> v(length * channels);
  for (auto& x : v) x = noise(rng);
  return TimeSeriesDataset(names, v);
}

struct OracleHit {
  std::size_t origin;
  long double similarity;
  bool valid;
};

// Full scan, long double, candidates and query both explicitly centered.
std::vector<OracleHit> oracle_topk(const TimeSeriesDataset& ds, std::size_t m, std::size_t horizon,
                                   std::size_t stride, const std::vector<double>& query, std::size_t query_origin,
                                   std::size_t k, std::optional<std::size_t> channel = std::nullopt) {
  const std::size_t c = ds.channels();
  auto centered = [&](auto value_at) {
    std::vector<long double> out(m * c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      long double mu = 0;
      for (std::size_t t = 0; t < m; ++t) mu += value_at(t, ch);
      mu /= m;
      for (std::size_t t = 0; t < m; ++t) out[t * c + ch] = value_at(t, ch) - mu;
    }
    return out;
  };
  auto q = centered([&](std::size_t t, std::size_t ch) { return static_cast<long double>(query[t * c + ch]); });
  auto in_scope = [&](std::size_t ch) { return !channel || *channel == ch; };
  long double qq = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (in_scope(i % c)) qq += q[i] * q[i];
  }
  std::vector<OracleHit> hits;
  for (std::size_t o = m; o + horizon <= ds.bounds().train_end; o += stride) {
    if (!(query_origin >= m && o + horizon <= query_origin - m)) continue;
    auto w = centered([&](std::size_t t, std::size_t ch) {
      return static_cast<long double>(ds.at(o - m + t, ch));
    });
    long double qw = 0, ww = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!in_scope(i % c)) continue;
      qw += q[i] * w[i];
      ww += w[i] * w[i];
    }
    bool valid = qq > 0 && ww > 0;
    hits.push_back({o, valid ? qw / std::sqrt(qq * ww) : 0.0L, valid});
  }
  std::stable_sort(hits.begin(), hits.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.valid != b.valid) return a.valid;
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.origin < b.origin;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

std::vector<double> copy_rows(const TimeSeriesDataset& ds, std::size_t begin, std::size_t end) {
  auto v = ds.rows(begin, end);
  return {v.data.begin(), v.data.end()};
}

MatrixView view(const std::vector<double>& v, std::size_t rows, std::size_t cols) { return {v, rows, cols}; }

// True when some retrieved future reaches into the query's target span or later.
bool leaks(const RetrievedSet& set, std::size_t query_origin, std::size_t horizon) {
  for (const auto& s : set.segments) {
    if (s.origin + horizon > query_origin) return true;
  }
  return false;
}

}  // namespace

TEST(BuildIndexTest, DenseCandidateCount) {
  auto ds = random_series(167, 2, 1);
  ASSERT_EQ(ds.bounds().train_end, 100u);
  auto index = RetrievalIndex::build(ds, 10, 5, 1);
  ASSERT_EQ(index.size(), 86u);
  EXPECT_EQ(index.origin(0), 10u);
  EXPECT_EQ(index.origin(85), 95u);
}

TEST(BuildIndexTest, StrideEqualToTrainLengthGivesOneCandidate) {
  auto ds = random_series(167, 2, 1);
  EXPECT_EQ(RetrievalIndex::build(ds, 10, 5, 100).size(), 1u);
}

TEST(BuildIndexTest, FuturesStayInsideTrainingSplit) {
  auto ds = random_series(500, 1, 3);
  auto index = RetrievalIndex::build(ds, 20, 7, 3);
  for (std::size_t i = 0; i < index.size(); ++i) {
    ASSERT_LE(index.origin(i) + index.horizon(), ds.bounds().train_end);
    ASSERT_EQ(index.future(i).data.data(), index.window(i).data.data() + index.window(i).data.size());
  }
}

TEST(BuildIndexTest, OversizedWindowIsConfigError) {
  auto ds = random_series(167, 1, 1);
  EXPECT_THROW(RetrievalIndex::build(ds, 96, 5), ConfigError);
  EXPECT_NO_THROW(RetrievalIndex::build(ds, 95, 5));
}

TEST(BuildIndexTest, NormsMatchRecomputation) {
  auto ds = random_series(400, 3, 5);
  auto index = RetrievalIndex::build(ds, 16, 4, 2);
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto w = index.window(i);
    double total = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double mu = 0, sq = 0;
      for (std::size_t t = 0; t < 16; ++t) mu += w(t, ch);
      mu /= 16;
      for (std::size_t t = 0; t < 16; ++t) sq += (w(t, ch) - mu) * (w(t, ch) - mu);
      ASSERT_NEAR(index.window_mean(i)[ch], mu, 1e-12);
      ASSERT_NEAR(index.centered_norm(i, ch), std::sqrt(sq), 1e-10);
      total += sq;
    }
    ASSERT_NEAR(index.centered_norm(i), std::sqrt(total), 1e-10);
  }
}

TEST(CosineTopkTest, SelfMatchRanksFirst) {
  auto ds = random_series(300, 2, 7);
  auto index = RetrievalIndex::build(ds, 12, 6);
  const std::size_t pick = 40;
  auto query = copy_rows(ds, index.origin(pick) - 12, index.origin(pick));
  auto set = cosine_topk(index, view(query, 12, 2), ds.length(), {.k = 3, .channel = {}});
  ASSERT_EQ(set.segments.size(), 3u);
  EXPECT_EQ(set.segments[0].origin, index.origin(pick));
  EXPECT_NEAR(set.segments[0].similarity, 1.0, 1e-12);
}

TEST(CosineTopkTest, OrthogonalQueryTiesBreakByOrigin) {
  // Query varies only on channel 0; every candidate is flat there.
  const std::size_t m = 8;
  std::vector<double> v;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise;
  for (std::size_t t = 0; t < 100; ++t) {
    v.push_back(5.0);
    v.push_back(noise(rng));
  }
  TimeSeriesDataset ds({"flat", "noise"}, v);
  auto index = RetrievalIndex::build(ds, m, 2);
  std::vector<double> query;
  for (std::size_t t = 0; t < m; ++t) {
    query.push_back(t % 2 == 0 ? 1.0 : -1.0);
    query.push_back(0.0);
  }
  auto set = cosine_topk(index, view(query, m, 2), ds.length(), {.k = 4, .channel = {}});
  ASSERT_EQ(set.segments.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(set.segments[j].similarity, 0.0);
    EXPECT_EQ(set.segments[j].origin, index.origin(j));
  }
}

TEST(CosineTopkTest, MatchesExhaustiveOracle200) {
  auto ds = random_series(352, 2, 2021);
  auto index = RetrievalIndex::build(ds, 8, 4);
  ASSERT_EQ(index.size(), 200u);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise;
  std::vector<double> query(16);
  for (auto& x : query) x = noise(rng);
  auto got = cosine_topk(index, view(query, 8, 2), ds.length(), {.k = 5, .channel = {}});
  auto want = oracle_topk(ds, 8, 4, 1, query, ds.length(), 5);
  ASSERT_EQ(got.segments.size(), 5u);
  ASSERT_EQ(want.size(), 5u);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(got.segments[j].origin, want[j].origin);
    EXPECT_NEAR(got.segments[j].similarity, static_cast<double>(want[j].similarity), 1e-12);
  }
  EXPECT_EQ(got.eligible, 200u);
}

TEST(CosineTopkTest, ExactnessProperty500Instances) {
  std::mt19937_64 rng(2021);
  std::normal_distribution<double> noise;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 4 + rng() % 12;
    const std::size_t horizon = 1 + rng() % 6;
    const std::size_t c = 1 + rng() % 3;
    const std::size_t stride = 1 + rng() % 3;
    const std::size_t train_len = m + horizon + rng() % 900;
    const std::size_t length = (train_len * 10 + 5) / 6;
    std::vector<std::string> names(c, "x");
    std::vector<double> v(length * c);
    for (auto& x : v) x = noise(rng);
    if (trial % 5 == 0) {
      // A flat stretch yields zero-norm candidates.
      const std::size_t start = rng() % (train_len / 2 + 1);
      for (std::size_t t = start; t < std::min(length, start + 2 * m); ++t) {
        for (std::size_t ch = 0; ch < c; ++ch) v[t * c + ch] = 3.0;
      }
    }
    TimeSeriesDataset ds(names, v);
    ASSERT_EQ(ds.bounds().train_end, train_len);
    auto index = RetrievalIndex::build(ds, m, horizon, stride);
    ASSERT_LE(index.size(), 1000u);
    std::vector<double> query(m * c);
    for (auto& x : query) x = noise(rng);
    const std::size_t query_origin = m + rng() % (length - m + 1);
    const std::size_t k = 1 + rng() % 8;
    std::optional<std::size_t> channel;
    if (c > 1 && trial % 4 == 1) channel = rng() % c;
    auto got = cosine_topk(index, view(query, m, c), query_origin, {.k = k, .channel = channel});
    auto want = oracle_topk(ds, m, horizon, stride, query, query_origin, k, channel);
    ASSERT_EQ(got.segments.size(), want.size()) << "trial " << trial;
    for (std::size_t j = 0; j < want.size(); ++j) {
      ASSERT_EQ(got.segments[j].origin, want[j].origin) << "trial " << trial << " rank " << j;
    }
  }
}

TEST(CosineTopkTest, SimilaritiesNonIncreasingAndBounded) {
  auto ds = random_series(600, 3, 9);
  auto index = RetrievalIndex::build(ds, 24, 8);
  auto query = copy_rows(ds, 500, 524);
  auto set = cosine_topk(index, view(query, 24, 3), 524, {.k = 50, .channel = {}});
  ASSERT_EQ(set.segments.size(), 50u);
  for (std::size_t j = 0; j < set.segments.size(); ++j) {
    EXPECT_GE(set.segments[j].similarity, -1.0);
    EXPECT_LE(set.segments[j].similarity, 1.0);
    if (j > 0) {
      const auto& a = set.segments[j - 1];
      const auto& b = set.segments[j];
      EXPECT_TRUE(a.similarity > b.similarity || (a.similarity == b.similarity && a.origin < b.origin));
    }
  }
}

TEST(CosineTopkTest, ScaleInvariance) {
  auto ds = random_series(500, 2, 13);
  auto index = RetrievalIndex::build(ds, 16, 4);
  auto query = copy_rows(ds, 420, 436);
  auto base = cosine_topk(index, view(query, 16, 2), 436, {.k = 10, .channel = {}});
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double factor = std::exp(std::uniform_real_distribution<double>(-5.0, 5.0)(rng));
    auto scaled = query;
    for (auto& x : scaled) x *= factor;
    auto got = cosine_topk(index, view(scaled, 16, 2), 436, {.k = 10, .channel = {}});
    ASSERT_EQ(got.segments.size(), base.segments.size());
    for (std::size_t j = 0; j < got.segments.size(); ++j) ASSERT_EQ(got.segments[j].origin, base.segments[j].origin);
  }
}

TEST(CosineTopkTest, NoLeakageForValAndTestQueries) {
  auto ds = random_series(1000, 2, 17);
  const std::size_t m = 30, horizon = 12;
  auto index = RetrievalIndex::build(ds, m, horizon);
  for (auto split : {data::Split::kVal, data::Split::kTest}) {
    for (const auto& w : data::make_windows(ds, split, m, horizon, 0, 7)) {
      auto set = cosine_topk(index, w.lookback(), w.origin_index(), {.k = 5, .channel = {}});
      ASSERT_FALSE(set.empty());
      ASSERT_FALSE(leaks(set, w.origin_index(), horizon));
      for (const auto& s : set.segments) ASSERT_LE(s.origin + horizon, w.origin_index() - m);
    }
  }
}

TEST(CosineTopkTest, FutureMaskedFaultIsDetected) {
  auto ds = random_series(1000, 2, 17);
  auto index = RetrievalIndex::build(ds, 30, 12);
  auto query = copy_rows(ds, 200, 230);
  auto clean = cosine_topk(index, view(query, 30, 2), 230, {.k = 5, .channel = {}});
  auto faulty = cosine_topk(index, view(query, 30, 2), 230, {.k = 5, .eligibility = Eligibility::kFutureOnly, .channel = {}});
  EXPECT_FALSE(leaks(clean, 230, 12));
  ASSERT_FALSE(faulty.empty());
  EXPECT_TRUE(leaks(faulty, 230, 12));
}

TEST(CosineTopkTest, EarlyQueryHasNoEligibleCandidates) {
  auto ds = random_series(300, 1, 4);
  auto index = RetrievalIndex::build(ds, 10, 5);
  auto query = copy_rows(ds, 10, 20);
  auto set = cosine_topk(index, view(query, 10, 1), 20, {.k = 5, .channel = {}});
  EXPECT_TRUE(set.empty());
  EXPECT_EQ(set.eligible, 0u);
}

TEST(CosineTopkTest, ShapeAndArgumentErrors) {
  auto ds = random_series(300, 2, 4);
  auto index = RetrievalIndex::build(ds, 10, 5);
  std::vector<double> wrong(9 * 2, 1.0);
  EXPECT_THROW(cosine_topk(index, view(wrong, 9, 2), 300, {}), DimensionError);
  std::vector<double> q(10 * 2, 1.0);
  EXPECT_THROW(cosine_topk(index, view(q, 10, 2), 300, {.k = 0, .channel = {}}), ContractError);
  EXPECT_THROW(cosine_topk(index, view(q, 10, 2), 300, {.k = 5, .channel = 2}), ContractError);
}

TEST(AggregateFuturesTest, SingleSegmentReturnsItsFuture) {
  std::vector<double> f{0.1, -2.0, 3.3, 4.25};
  RetrievedSet set;
  set.segments.push_back({7, 0.37, {}, view(f, 2, 2)});
  auto out = aggregate_futures(set, 0.1);
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], f[i]);
}

TEST(AggregateFuturesTest, EqualSimilaritiesGiveMean) {
  std::vector<double> a{1.0, 2.0, 3.0}, b{3.0, -2.0, 0.0};
  RetrievedSet set;
  set.segments.push_back({1, 0.5, {}, view(a, 3, 1)});
  set.segments.push_back({2, 0.5, {}, view(b, 3, 1)});
  auto out = aggregate_futures(set, 0.7);
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 1.5);
}

TEST(AggregateFuturesTest, MatchesHandSoftmaxAtTemperatureTenth) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> noise;
  const std::vector<double> sims{0.93, 0.88, 0.71, 0.52, 0.11};
  std::vector<std::vector<double>> futures(5, std::vector<double>(12));
  RetrievedSet set;
  for (std::size_t j = 0; j < 5; ++j) {
    for (auto& x : futures[j]) x = noise(rng);
    set.segments.push_back({j, sims[j], {}, view(futures[j], 4, 3)});
  }
  long double z = 0;
  std::vector<long double> e(5);
  for (std::size_t j = 0; j < 5; ++j) z += e[j] = std::exp(static_cast<long double>(sims[j]) / 0.1L);
  auto out = aggregate_futures(set, 0.1);
  auto weights = similarity_weights(set, 0.1);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(weights[j], static_cast<double>(e[j] / z), 1e-14);
  for (std::size_t i = 0; i < 12; ++i) {
    long double want = 0;
    for (std::size_t j = 0; j < 5; ++j) want += e[j] / z * futures[j][i];
    EXPECT_NEAR(out[i], static_cast<double>(want), 1e-13);
  }
}

TEST(AggregateFuturesTest, ConvexCombinationProperty) {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> noise;
  std::uniform_real_distribution<double> sim(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 6;
    std::vector<std::vector<double>> futures(k, std::vector<double>(10));
    RetrievedSet set;
    for (std::size_t j = 0; j < k; ++j) {
      for (auto& x : futures[j]) x = noise(rng) * 10;
      set.segments.push_back({j, sim(rng), {}, view(futures[j], 5, 2)});
    }
    const double temperature = std::exp(std::uniform_real_distribution<double>(-4.0, 2.0)(rng));
    auto out = aggregate_futures(set, temperature);
    for (std::size_t i = 0; i < 10; ++i) {
      double lo = futures[0][i], hi = futures[0][i];
      for (std::size_t j = 1; j < k; ++j) {
        lo = std::min(lo, futures[j][i]);
        hi = std::max(hi, futures[j][i]);
      }
      ASSERT_GE(out[i], lo - 1e-12);
      ASSERT_LE(out[i], hi + 1e-12);
    }
  }
}

TEST(AggregateFuturesTest, EmptySetIsContractError) {
  EXPECT_THROW(aggregate_futures(RetrievedSet{}, 1.0), ContractError);
}

TEST(IndexPersistenceTest, SaveLoadRoundTrip) {
  auto ds = random_series(400, 3, 23);
  auto index = RetrievalIndex::build(ds, 20, 6, 3);
  auto path = std::filesystem::temp_directory_path() / "ctxscale_index.bin";
  index.save(path);
  auto loaded = RetrievalIndex::load(path);
  ASSERT_EQ(loaded.size(), index.size());
  EXPECT_EQ(loaded.window_length(), 20u);
  EXPECT_EQ(loaded.horizon(), 6u);
  EXPECT_EQ(loaded.channels(), 3u);
  EXPECT_EQ(loaded.stride(), 3u);
  for (std::size_t i = 0; i < index.size(); ++i) {
    ASSERT_EQ(loaded.origin(i), index.origin(i));
    auto a = index.window(i), b = loaded.window(i);
    for (std::size_t j = 0; j < a.data.size(); ++j) ASSERT_EQ(a.data[j], b.data[j]);
    auto fa = index.future(i), fb = loaded.future(i);
    for (std::size_t j = 0; j < fa.data.size(); ++j) ASSERT_EQ(fa.data[j], fb.data[j]);
    ASSERT_EQ(loaded.centered_norm(i), index.centered_norm(i));
  }
  auto query = copy_rows(ds, 350, 370);
  auto x = cosine_topk(index, view(query, 20, 3), 370, {.k = 5, .channel = {}});
  auto y = cosine_topk(loaded, view(query, 20, 3), 370, {.k = 5, .channel = {}});
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(x.segments[j].origin, y.segments[j].origin);
    EXPECT_EQ(x.segments[j].similarity, y.segments[j].similarity);
  }
}

TEST(IndexPersistenceTest, RejectsForeignFile) {
  auto path = std::filesystem::temp_directory_path() / "ctxscale_not_index.bin";
  std::ofstream(path) << "hello world, not an index";
  EXPECT_THROW(RetrievalIndex::load(path), ParseError);
}
