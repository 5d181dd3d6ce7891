#pragma once

#include <cstdint>

namespace umi {

// Counter-based random numbers: every draw is a pure function of a 64-bit
// key, so fields can be generated per-index in any order (or in parallel)
// with bit-identical results.

// SplitMix64 finalizer.
inline uint64_t hash_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return hash_mix(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

template <typename... Rest>
uint64_t hash_combine(uint64_t a, uint64_t b, Rest... rest) {
  return hash_combine(hash_combine(a, b), uint64_t(rest)...);
}

// Uniform in [0, 1) with 53-bit resolution.
inline double uniform01(uint64_t key) {
  return double(hash_mix(key) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two derived uniforms.
double gaussian(uint64_t key);

// Small sequential stream for shuffles and draws where a counter key is
// inconvenient. Deterministic for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(hash_mix(seed ^ 0x5851f42d4c957f2dULL)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return hash_mix(state_);
  }
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n);
  double normal();

 private:
  uint64_t state_;
};

} // namespace umi
