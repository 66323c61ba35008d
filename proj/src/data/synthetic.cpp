#include "ctxscale/data/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "ctxscale/errors.hpp"
#include "ctxscale/numerics/random.hpp"

namespace ctxscale::data {

const char* to_string(Generator g) {
  switch (g) {
    case Generator::kPeriodic: return "periodic";
    case Generator::kSineNoise: return "sine_noise";
    case Generator::kHourlyLoad: return "hourly_load";
  }
  return "?";
}

Generator parse_generator(const std::string& name) {
  if (name == "periodic") return Generator::kPeriodic;
  if (name == "sine_noise") return Generator::kSineNoise;
  if (name == "hourly_load") return Generator::kHourlyLoad;
  throw ConfigError("unknown generator '" + name + "' (periodic, sine_noise, hourly_load)");
}

TimeSeriesDataset synthetic_series(const SyntheticSpec& spec) {
  if (spec.rows == 0 || spec.channels == 0) throw ConfigError("synthetic series needs rows and channels");
  if (spec.kind == Generator::kPeriodic && spec.period == 0) throw ConfigError("period must be positive");
  numerics::Rng rng(spec.seed);
  const std::size_t C = spec.channels;
  const double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> v(spec.rows * C);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < C; ++c) names.push_back("s" + std::to_string(c));

  switch (spec.kind) {
    case Generator::kPeriodic: {
      std::vector<double> pattern(spec.period * C);
      for (auto& x : pattern) x = rng.normal();
      for (std::size_t t = 0; t < spec.rows; ++t) {
        for (std::size_t c = 0; c < C; ++c) v[t * C + c] = pattern[(t % spec.period) * C + c];
      }
      break;
    }
    case Generator::kSineNoise: {
      for (std::size_t t = 0; t < spec.rows; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          v[t * C + c] = std::sin(two_pi * static_cast<double>(t) / 24.0 + static_cast<double>(c)) + 0.5 * rng.normal();
        }
      }
      break;
    }
    case Generator::kHourlyLoad: {
      std::vector<double> level(C, 0.0), ar(C, 0.0), daily(C), weekly(C), phase(C);
      for (std::size_t c = 0; c < C; ++c) {
        daily[c] = 0.5 + rng.uniform();
        weekly[c] = 0.2 + 0.5 * rng.uniform();
        phase[c] = two_pi * rng.uniform();
        level[c] = 5.0 * rng.normal();
      }
      for (std::size_t t = 0; t < spec.rows; ++t) {
        const double td = static_cast<double>(t);
        for (std::size_t c = 0; c < C; ++c) {
          level[c] += 0.05 * rng.normal();
          ar[c] = 0.9 * ar[c] + 0.4 * rng.normal();
          v[t * C + c] = level[c] + daily[c] * std::sin(two_pi * td / 24.0 + phase[c]) +
                         weekly[c] * std::sin(two_pi * td / 168.0 + 0.5 * phase[c]) + ar[c];
        }
      }
      break;
    }
  }
  TimeSeriesDataset ds(std::move(names), std::move(v));
  ds.name = to_string(spec.kind);
  return ds;
}

}  // namespace ctxscale::data
