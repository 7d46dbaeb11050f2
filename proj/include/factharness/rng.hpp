#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace factharness {

// mt19937_64 output is pinned by the standard; the std distributions are
// not, so bounded draws are derived by hand to keep seeded runs identical
// across platforms and library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform integer in [0, n), rejection-sampled to avoid modulo bias
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      std::uint64_t x = engine_();
      if (x < limit) return x % n;
    }
  }

  // uniform double in [0, 1) with 53-bit resolution
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller on hand-rolled uniforms
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586 * u2);
    have_spare_ = true;
    return mag * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace factharness
