#include "umi/rng.hpp"

#include <cmath>

namespace umi {

double gaussian(uint64_t key) {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - uniform01(hash_combine(key, 0x9d5c0f2ae1b7a3c5ULL));
  double u2 = uniform01(hash_combine(key, 0x3c6ef372fe94f82aULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t Rng::below(uint64_t n) {
  // Rejection sampling over the top multiple of n.
  uint64_t limit = n * (UINT64_MAX / n);
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

} // namespace umi
