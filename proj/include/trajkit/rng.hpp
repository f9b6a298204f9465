#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace trajkit {

// Deterministic RNG wrapper. std::uniform_int_distribution and friends are
// implementation-defined, so every draw here is built directly on the raw
// mt19937_64 stream to keep outputs identical across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n). n must be > 0.
  uint64_t bounded(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Ordered pair (i, j), i != j, uniform over all n*(n-1) pairs. n must be >= 2.
  std::pair<size_t, size_t> ordered_pair(size_t n) {
    size_t i = static_cast<size_t>(bounded(n));
    size_t j = static_cast<size_t>(bounded(n - 1));
    if (j >= i) ++j;
    return {i, j};
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t k = v.size(); k > 1; --k) {
      size_t r = static_cast<size_t>(bounded(k));
      std::swap(v[k - 1], v[r]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace trajkit
