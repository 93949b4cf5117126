#pragma once

#include <cstdint>
#include <random>

namespace ntnpos {

/// Splittable deterministic seeding: every random stream in a run is keyed by
/// (master_seed, stream tag words) through SplitMix64 mixing, so Monte-Carlo
/// trials are reproducible independent of evaluation order or worker count.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0,
                            uint64_t d = 0) {
  uint64_t s = splitmix64(master ^ 0x5851f42d4c957f2dULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  s = splitmix64(s ^ c);
  s = splitmix64(s ^ d);
  return s;
}

inline std::mt19937_64 make_rng(uint64_t master, uint64_t a, uint64_t b = 0, uint64_t c = 0,
                                uint64_t d = 0) {
  return std::mt19937_64(derive_seed(master, a, b, c, d));
}

}  // namespace ntnpos
