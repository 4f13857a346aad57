#pragma once

#include <cstdint>
#include <random>

namespace modgate {

/// Deterministic random source. The engine (mt19937_64) is fully specified
/// by the standard; the value mappings below are implemented here rather than
/// via <random> distributions, whose outputs differ between standard
/// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream for item `stream` under `master`, so parallel and
  /// serial generation agree.
  static Rng derive(std::uint64_t master, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace modgate
