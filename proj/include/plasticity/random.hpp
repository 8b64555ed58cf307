#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace plasticity {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the independent stream `index` under `master`. Streams depend only
/// on (master, index), so replicates can run in any order or in parallel.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t index) {
  Rng rng(stream_seed(master, index));
  return rng;
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Exp(1) variate.
inline double exponential1(Rng& rng) { return -std::log1p(-uniform01(rng)); }

inline double normal(Rng& rng, double mean, double sd) {
  std::normal_distribution<double> dist(mean, sd);
  return dist(rng);
}

inline double chi_squared(Rng& rng, double dof) {
  std::chi_squared_distribution<double> dist(dof);
  return dist(rng);
}

}  // namespace plasticity
