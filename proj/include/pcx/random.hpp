#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pcx {

// Engine output is fully specified by the standard; the distributions below
// are written out so that draws are identical across standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Box-Muller; consumes two uniforms per call.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace pcx
