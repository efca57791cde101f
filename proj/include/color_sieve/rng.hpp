#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace color_sieve {

/// Seeded generator with platform-independent output.
///
/// std::uniform_*_distribution is implementation-defined, so bounded integers
/// and doubles are derived from raw mt19937_64 words here. Every artifact that
/// depends on randomness must go through this type.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in the open interval (0, 1).
  double uniform();

  /// Standard Gumbel(0, 1) variate.
  double gumbel();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for a named substream of `root`. Stages draw from their own substream
/// so each is reproducible on its own.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace color_sieve
