#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ctxscale/data/dataset.hpp"
#include "ctxscale/data/synthetic.hpp"

using namespace ctxscale;
using namespace ctxscale::data;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / ("ctxscale_data_" + name);
  std::ofstream(path) << body;
  return path;
}

TimeSeriesDataset synthetic(std::size_t length, std::size_t channels, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) names.push_back("c" + std::to_string(c));
  std::vector<double> v(length * channels);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t c = 0; c < channels; ++c) v[t * channels + c] = 5.0 + c + std::sin(0.1 * t) + noise(rng);
  }
  return TimeSeriesDataset(names, v);
}

// Enumerates every origin and keeps those whose windows fit the split rules.
std::size_t brute_force_count(std::size_t length, Split split, std::size_t lookback, std::size_t horizon) {
  const std::size_t train_end = length * 6 / 10, val_end = length * 8 / 10;
  const std::size_t begin = split == Split::kTrain ? 0 : split == Split::kVal ? train_end : val_end;
  const std::size_t end = split == Split::kTrain ? train_end : split == Split::kVal ? val_end : length;
  std::size_t count = 0;
  for (std::size_t o = 0; o <= length; ++o) {
    bool target_inside = o >= begin && o + horizon <= end;
    bool history_available = o >= lookback;
    if (target_inside && history_available) ++count;
  }
  return count;
}

}  // namespace

TEST(LoadCsvTest, SmallFileIngestedVerbatim) {
  std::string body = "date,a,b\n";
  std::vector<double> expected;
  for (int i = 0; i < 10; ++i) {
    body += "2020-01-01 0" + std::to_string(i) + ":00:00," + std::to_string(i * 1.5) + "," + std::to_string(-i) + "\n";
    expected.push_back(i * 1.5);
    expected.push_back(-i);
  }
  auto ds = load_csv(write_temp("small.csv", body));
  EXPECT_EQ(ds.length(), 10u);
  ASSERT_EQ(ds.channels(), 2u);
  EXPECT_EQ(ds.channel_names(), (std::vector<std::string>{"a", "b"}));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(ds.values()[i], expected[i]);
  EXPECT_TRUE(ds.warnings().empty());
  EXPECT_EQ(ds.bounds().train_end, 6u);
  EXPECT_EQ(ds.bounds().val_end, 8u);
}

TEST(LoadCsvTest, DateColumnMayAppearAnywhere) {
  auto ds = load_csv(write_temp("mid.csv", "x,stamp,y\n1,2020-01-01,2\n3,2020-01-02,4\n"), "stamp");
  EXPECT_EQ(ds.channel_names(), (std::vector<std::string>{"x", "y"}));
  EXPECT_DOUBLE_EQ(ds.at(1, 1), 4.0);
}

TEST(LoadCsvTest, MissingCellReportsRow) {
  try {
    load_csv(write_temp("missing.csv", "date,a,b\n2020-01-01,1,2\n2020-01-02,,3\n"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_csv(write_temp("nan.csv", "date,a\n2020-01-01,nan\n")), ParseError);
  EXPECT_THROW(load_csv(write_temp("short.csv", "date,a,b\n2020-01-01,1\n")), ParseError);
}

TEST(LoadCsvTest, MissingDateColumnIsError) {
  EXPECT_THROW(load_csv(write_temp("nodate.csv", "time,a\nx,1\n")), ParseError);
}

TEST(LoadCsvTest, NonMonotoneTimestampsWarnOnly) {
  auto ds = load_csv(write_temp("order.csv", "date,a\n2020-01-02,1\n2020-01-01,2\n2020-01-03,3\n"));
  EXPECT_EQ(ds.length(), 3u);
  ASSERT_EQ(ds.warnings().size(), 1u);
  EXPECT_NE(ds.warnings()[0].find("row 3"), std::string::npos);
}

TEST(LoadCsvTest, MaxRowsTruncates) {
  auto ds = load_csv(write_temp("trunc.csv", "date,a\n1,1\n2,2\n3,3\n4,4\n"), "date", 3);
  EXPECT_EQ(ds.length(), 3u);
}

TEST(FitTransformTest, TrainingMomentsAreStandard) {
  auto ds = fit_transform(synthetic(500, 3));
  const std::size_t n = ds.bounds().train_end;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t t = 0; t < n; ++t) mean += ds.at(t, c);
    mean /= n;
    for (std::size_t t = 0; t < n; ++t) sq += (ds.at(t, c) - mean) * (ds.at(t, c) - mean);
    EXPECT_GT(mean, -1e-9);
    EXPECT_LT(mean, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / n), 1.0, 1e-6);
  }
}

TEST(FitTransformTest, InverseRoundTrip) {
  auto raw = synthetic(200, 2, 9);
  auto z = fit_transform(raw);
  auto back = inverse_transform(z, z.values());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], raw.values()[i], 1e-10);
}

TEST(FitTransformTest, ScalerUsesTrainingRowsOnly) {
  // Level shift after the training split: whole-series mean must differ.
  std::vector<double> v(100);
  for (std::size_t t = 0; t < 100; ++t) v[t] = (t < 60 ? 0.0 : 10.0) + (t % 2 == 0 ? 1.0 : -1.0);
  auto ds = fit_transform(TimeSeriesDataset({"x"}, v));
  double full_mean = 0;
  for (double x : v) full_mean += x;
  full_mean /= 100;
  EXPECT_NEAR(ds.scaler().mean[0], 0.0, 1e-12);
  EXPECT_NEAR(full_mean, 4.0, 1e-12);
  EXPECT_NE(ds.scaler().mean[0], full_mean);
  EXPECT_NEAR(ds.scaler().std[0], 1.0, 1e-12);
}

TEST(FitTransformTest, ConstantTrainingChannelIsFatal) {
  std::vector<double> v;
  for (int t = 0; t < 20; ++t) {
    v.push_back(3.0);
    v.push_back(t);
  }
  try {
    fit_transform(TimeSeriesDataset({"flat", "ramp"}, v));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
  }
}

TEST(FitTransformTest, GuardedAgainstDoubleApplication) {
  auto once = fit_transform(synthetic(100, 2));
  auto twice = fit_transform(once);
  ASSERT_TRUE(twice.standardized());
  for (std::size_t i = 0; i < once.values().size(); ++i) EXPECT_EQ(once.values()[i], twice.values()[i]);
}

TEST(MakeWindowsTest, HandEnumeratedTrainOrigins) {
  auto ds = synthetic(100, 2);
  auto windows = make_windows(ds, Split::kTrain, 24, 12, 6);
  ASSERT_EQ(windows.size(), 25u);
  EXPECT_EQ(windows.front().origin_index(), 24u);
  EXPECT_EQ(windows.back().origin_index(), 48u);
}

TEST(MakeWindowsTest, FullHistoryGivesOneSample) {
  auto ds = synthetic(100, 1);
  EXPECT_EQ(make_windows(ds, Split::kTrain, 48, 12, 6).size(), 1u);
}

TEST(MakeWindowsTest, EttShapedTestSplitCount) {
  auto ds = synthetic(14400, 1);
  EXPECT_EQ(make_windows(ds, Split::kTest, 720, 96, 48).size(), 2785u);
  EXPECT_EQ(make_windows(ds, Split::kTest, 3000, 96, 48).size(), 2785u);
}

TEST(MakeWindowsTest, InfeasibleLookbackReportsMaximum) {
  auto ds = synthetic(100, 1);
  try {
    make_windows(ds, Split::kTrain, 50, 12, 6);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("max feasible lookback is 48"), std::string::npos) << e.what();
  }
}

TEST(MakeWindowsTest, SampleLayoutInvariants) {
  auto ds = synthetic(300, 3);
  for (auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& w : make_windows(ds, split, 40, 10, 8)) {
      auto lb = w.lookback();
      auto seed = w.decoder_seed();
      auto tgt = w.target();
      ASSERT_EQ(lb.rows, 40u);
      ASSERT_EQ(seed.rows, 8u);
      ASSERT_EQ(tgt.rows, 10u);
      for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(seed(r, c), lb(32 + r, c));
      }
      // Targets start where the lookback ends and stay inside the split.
      ASSERT_EQ(lb.data.data() + lb.data.size(), tgt.data.data());
      ASSERT_GE(w.origin_index(), ds.split_begin(split));
      ASSERT_LE(w.origin_index() + 10, ds.split_end(split));
      if (split == Split::kTrain) {
        ASSERT_GE(w.origin_index() - 40, ds.split_begin(split));
      }
    }
  }
}

TEST(MakeWindowsTest, CountsMatchBruteForceEnumerator) {
  std::mt19937_64 rng(2021);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t length = 20 + rng() % 400;
    std::size_t lookback = 1 + rng() % (length / 2);
    std::size_t horizon = 1 + rng() % 30;
    auto ds = synthetic(length, 1, trial);
    for (auto split : {Split::kTrain, Split::kVal, Split::kTest}) {
      std::size_t expected = brute_force_count(length, split, lookback, horizon);
      if (expected == 0) {
        EXPECT_THROW(make_windows(ds, split, lookback, horizon, 1), ConfigError);
      } else {
        ASSERT_EQ(make_windows(ds, split, lookback, horizon, 1).size(), expected)
            << "T=" << length << " L=" << lookback << " H=" << horizon << " " << to_string(split);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(SyntheticTest, PeriodicRepeatsBitwise) {
  data::SyntheticSpec s;
  s.kind = data::Generator::kPeriodic;
  s.rows = 100;
  s.channels = 2;
  s.period = 7;
  auto ds = data::synthetic_series(s);
  EXPECT_EQ(ds.length(), 100u);
  for (std::size_t t = 7; t < 100; ++t) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(ds.at(t, c), ds.at(t - 7, c));
  }
}

TEST(SyntheticTest, SeededAndShaped) {
  data::SyntheticSpec s;
  s.kind = data::Generator::kHourlyLoad;
  s.rows = 14400;
  s.channels = 7;
  auto a = data::synthetic_series(s);
  auto b = data::synthetic_series(s);
  EXPECT_EQ(a.channels(), 7u);
  EXPECT_EQ(a.bounds().train_end, 8640u);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  s.seed = 1;
  auto c = data::synthetic_series(s);
  EXPECT_NE(a.at(10, 0), c.at(10, 0));
  EXPECT_THROW(data::parse_generator("brownian"), ConfigError);
  s.rows = 0;
  EXPECT_THROW(data::synthetic_series(s), ConfigError);
}
