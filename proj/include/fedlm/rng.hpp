// SPDX-License-Identifier: Apache-2.0
/**
 * @file   rng.hpp
 * @brief  Seeded randomness with platform-independent streams.
 *
 * std::mt19937_64 has a standardized output sequence, but the standard
 * distributions do not, so the few distributions used here are written out
 * explicitly. Every random decision in the library takes a seed produced by
 * derive_seed(); there is no global generator.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace fedlm {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Component-tagged sub-seed: derive_seed(seed, {tag, round, client, ...}).
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(seed);
  for (auto p : parts)
    h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Stable tags for derive_seed so sub-streams never collide.
namespace seed_tag {
inline constexpr std::uint64_t init_tensor = 1;
inline constexpr std::uint64_t partition = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t synth = 4;
inline constexpr std::uint64_t central_epoch = 5;
inline constexpr std::uint64_t availability = 6;
inline constexpr std::uint64_t cohort = 7;
inline constexpr std::uint64_t client_epoch = 8;
inline constexpr std::uint64_t model_init = 9;
} // namespace seed_tag

class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n), rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1)
      return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one draw per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0)
      u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T> void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i)
      std::swap(items[i - 1], items[below(i)]);
  }

private:
  std::mt19937_64 engine_;
};

} // namespace fedlm
