#pragma once

#include <cstdint>
#include <string>

#include "ctxscale/data/dataset.hpp"

namespace ctxscale::data {

enum class Generator { kPeriodic, kSineNoise, kHourlyLoad };

const char* to_string(Generator g);
Generator parse_generator(const std::string& name);

struct SyntheticSpec {
  Generator kind = Generator::kSineNoise;
  std::size_t rows = 2000;
  std::size_t channels = 3;
  std::uint64_t seed = 2021;
  /// Repeat length for kPeriodic.
  std::size_t period = 24;
};

/// Raw (unstandardized) synthetic series.
///
/// kPeriodic repeats one random pattern bitwise. kSineNoise is a daily sine
/// with white noise. kHourlyLoad mimics an hourly sensor table: daily and
/// weekly cycles, AR(1) noise and a slow random-walk level per channel.
TimeSeriesDataset synthetic_series(const SyntheticSpec& spec);

}  // namespace ctxscale::data
