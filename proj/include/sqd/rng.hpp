#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sqd {

// SplitMix64 output function.
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Master-seed fan-out: every component derives its own stream from
// (seed, tag, index), so adding a component never shifts another's draws.
inline uint64_t seed_derive(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  return mix64(mix64(seed ^ fnv1a64(tag)) + index);
}

// Counter-based generator: draw i depends only on (key, i), which makes
// streams replayable and random-access without storing state.
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : key_(key) {}
  CounterRng(uint64_t seed, std::string_view tag, uint64_t index = 0)
      : key_(seed_derive(seed, tag, index)) {}

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64() { return at(counter_++); }
  uint64_t at(uint64_t counter) const {
    return mix64(key_ + counter * 0x9E3779B97F4A7C15ull);
  }

  // 53-bit uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t uniform_index(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; consumes two uniforms per draw, no caching.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace sqd
