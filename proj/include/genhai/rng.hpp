#pragma once

#include <bit>
#include <cstdint>
#include <limits>

namespace genhai {

/// Splittable 64-bit generator (the SplitMix64 / SplittableRandom
/// construction). Every stream is a pure function of (seed, gamma), and
/// split() hands out statistically independent child streams, so Monte Carlo
/// work fanned out over threads stays reproducible.
///
/// Satisfies UniformRandomBitGenerator, so it can drive the <random>
/// distributions directly.
class Rng {
 public:
  using result_type = std::uint64_t;

  static constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

  explicit Rng(std::uint64_t seed = 0) : state_(seed), gamma_(kGoldenGamma) {}

  /// Deterministic child stream `stream_id` of a root `seed`. Independent of
  /// how many other streams were derived before it.
  static Rng for_stream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = mix64(seed ^ mix64((stream_id + 1) * kGoldenGamma));
    return Rng(s, mix_gamma(s + kGoldenGamma));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix64(next_seed()); }

  Rng split() {
    std::uint64_t s = (*this)();
    return Rng(s, mix_gamma(next_seed()));
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); safe to take logs of.
  double uniform_open() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdULL;
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ULL;
    return z ^ (z >> 33);
  }

 private:
  Rng(std::uint64_t state, std::uint64_t gamma) : state_(state), gamma_(gamma) {}

  std::uint64_t next_seed() { return state_ += gamma_; }

  static constexpr std::uint64_t mix_gamma(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = (z ^ (z >> 31)) | 1ULL;
    return std::popcount(z ^ (z >> 1)) < 24 ? z ^ 0xaaaaaaaaaaaaaaaaULL : z;
  }

  std::uint64_t state_;
  std::uint64_t gamma_;
};

}  // namespace genhai
