#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace thn {

// Deterministic RNG stream. Distributions are hand-rolled on top of
// mt19937_64 so sequences do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Stream derived from (seed, index); used for per-sample reproducibility.
  static Rng for_index(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 on the pair
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) { return eng_() % n; }

  double normal() {
    // Box-Muller, cached second value
    if (has_cached_) { has_cached_ = false; return cached_; }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace thn
