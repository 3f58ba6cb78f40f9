#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dietcap {

// SplitMix64: a 64-bit counter-based generator (Steele, Lea & Flood 2014).
// The state advances by a fixed odd gamma and every output is a bijective mix
// of the counter, so streams are reproducible across platforms and compilers.
// Distribution helpers are implemented here rather than via <random> because
// the standard distributions are not specified bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Box-Muller; one variate per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent child stream, used to give each component its own sequence.
  Rng fork(std::uint64_t salt) { return Rng(next_u64() ^ (salt * 0xd1342543de82ef95ULL)); }

 private:
  std::uint64_t state_;
};

}  // namespace dietcap
