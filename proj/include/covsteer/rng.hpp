#pragma once

#include <cmath>
#include <cstdint>

namespace covsteer {

/// Counter-derived SplitMix64 stream. Stream i of a given seed is
/// statistically independent of stream j, so Monte Carlo samples can be
/// assigned one stream each and sharded arbitrarily without changing the
/// drawn numbers.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(seed + 0x9E3779B97F4A7C15ULL * (stream + 1)) {
    // burn-in decorrelates nearby (seed, stream) pairs
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in the open interval (0, 1).
  double next_uniform() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

/// Standard normal draws on top of SplitMix64 via Box-Muller, so results are
/// identical across platforms and standard libraries.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed, std::uint64_t stream = 0)
      : rng_(seed, stream) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.next_uniform();
    const double u2 = rng_.next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace covsteer
