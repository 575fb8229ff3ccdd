#pragma once

#include <cstdint>

namespace anymole {

/// Deterministic random source. All draws are defined in terms of the raw
/// 64-bit stream (splitmix64 seeding + xoshiro256**), so sequences are
/// byte-identical across platforms and standard-library versions — the
/// std::*_distribution adapters are deliberately not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of randomness.
  double uniform();
  double uniform(double lo, double hi);

  /// Inclusive integer range (debiased via rejection).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal via Box-Muller (second value cached).
  double normal();

  /// Independent child stream; fork(k) depends only on (seed, k).
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace anymole
