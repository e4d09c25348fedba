#pragma once

// Portable draws on top of std::mt19937_64. The engine output is fully
// specified by the standard; the <random> distributions are not, so the
// few distributions needed here are written out to keep results identical
// across standard libraries.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mrfaccel::rng {

using Engine = std::mt19937_64;

/// Engine for stream `index` of `seed`; streams are independent of draw order.
inline Engine stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Engine(seq);
}

/// [0, 1) with 53 random bits.
inline double uniform01(Engine& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(Engine& g, double lo, double hi) { return lo + (hi - lo) * uniform01(g); }

/// Unbiased integer in [0, n).
inline std::uint64_t below(Engine& g, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = g();
  while (v >= limit) v = g();
  return v % n;
}

/// Standard normal via Box-Muller (one value per call).
inline double normal(Engine& g) {
  const double u1 = 1.0 - uniform01(g);  // (0, 1]
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mrfaccel::rng
