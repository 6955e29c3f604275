#pragma once

#include <cstdint>
#include <random>

#include "gdyna/linalg.hpp"

namespace gdyna {

using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Index drawn from a probability vector by inverse CDF.
inline int sample_discrete(const Vector& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  const auto n = static_cast<int>(probs.size());
  for (int i = 0; i < n; ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  // Rounding left u above the accumulated mass; take the last supported index.
  for (int i = n - 1; i >= 0; --i)
    if (probs(i) > 0.0) return i;
  return n - 1;
}

/// Derive an independent stream seed from a base seed and a stream tag (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace gdyna
