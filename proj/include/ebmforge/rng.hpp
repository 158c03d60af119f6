// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace ebmforge {

// Deterministic RNG with portable value derivation (raw mt19937_64 draws,
// no std::*_distribution, whose output is implementation-defined).
// fork(i) derives an independent substream; substream assignment is
// deterministic in (root seed, i).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // N(0, 1), Box-Muller
  std::uint64_t next_u64();
  std::size_t index(std::size_t n);        // uniform in [0, n)
  bool bernoulli(double p);

  Rng fork(std::uint64_t stream) const;

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::uint64_t root_;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ebmforge
