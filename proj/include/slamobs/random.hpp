#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "slamobs/geometry.hpp"

namespace slamobs {

namespace detail {

// SplitMix64. Used for seeding and for deriving independent stream keys.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Key for an independent sub-stream of `seed`. Two-level use
/// (per-run key, then per-channel key) keeps noise channels decoupled.
inline std::uint64_t derive_stream_key(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed;
  std::uint64_t k = detail::splitmix64(s);
  s = k ^ (stream * 0xD1B54A32D192ED03ULL + 0x8BB84B93962EACC9ULL);
  k = detail::splitmix64(s);
  return detail::splitmix64(s) ^ k;
}

/// Deterministic random stream: xoshiro256++ with SplitMix64 seeding.
/// Self-contained so that the increment sequence for a given seed is
/// bit-reproducible across platforms and standard libraries.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      word = detail::splitmix64(s);
    }
  }

  /// Stream for (seed, stream) independent of the parent stream.
  static RandomSource substream(std::uint64_t seed, std::uint64_t stream) {
    return RandomSource(derive_stream_key(seed, stream));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result =
        detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal draw (Marsaglia polar method, pair-cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  Vec3 normal3() {
    const double a = normal();
    const double b = normal();
    const double c = normal();
    return Vec3(a, b, c);
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace slamobs
