#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace sqp {

/// Deterministic random source. Wraps std::mt19937_64 with hand-written
/// distributions so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)) {}

  /// Independent stream keyed by (seed, a, b); used to derive per-sample or
  /// per-epoch generators without consuming the parent stream.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return Rng(mix(seed ^ mix(a + 0x9e3779b97f4a7c15ULL) ^ mix(b + 0x632be59bd9b4e019ULL)));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal (Box-Muller, one value per call).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[static_cast<std::size_t>(below(i))]);
    }
  }

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sqp
