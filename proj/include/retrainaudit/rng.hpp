#pragma once

#include <cstdint>
#include <random>

namespace retrainaudit {

// SplitMix64 step. Used only to derive seeds, not as the working generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Splittable seed derivation: every (master seed, structural path) pair maps
// to an independent stream, so replicas can run in any order or in parallel
// with schedule-independent output.
inline std::uint64_t derive_seed(std::uint64_t master) {
  std::uint64_t s = master;
  return splitmix64(s);
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t head, Rest... rest) {
  std::uint64_t s = master ^ 0x5851f42d4c957f2dULL;
  s = splitmix64(s) ^ head;
  return derive_seed(splitmix64(s), rest...);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace retrainaudit
