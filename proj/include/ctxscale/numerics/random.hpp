#pragma once

#include <cstdint>
#include <random>

namespace ctxscale::numerics {

/// Seeded generator shared by initialization, dropout and shuffling.
/// Streams are reproducible within one build of the library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return std::normal_distribution<double>{}(engine_); }

  std::mt19937_64& engine() { return engine_; }

  /// Derives an independent child stream; used to give each component its own.
  Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ull); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ctxscale::numerics
