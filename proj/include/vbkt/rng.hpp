#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

namespace vbkt {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL));
}

/// Key of a counter-based random stream. Two streams with different keys are
/// independent; the values of a stream never depend on what was drawn from
/// any other stream.
struct RngKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t node = 0;

  constexpr std::uint64_t base() const {
    return hash_combine(hash_combine(mix64(seed), step), node);
  }
};

/// Counter-based generator: the i-th draw is a pure function of (key, i).
class CounterRng {
 public:
  constexpr explicit CounterRng(RngKey key) : base_(key.base()) {}
  constexpr explicit CounterRng(std::uint64_t seed) : base_(RngKey{seed, 0, 0}.base()) {}

  constexpr std::uint64_t bits_at(std::uint64_t i) const { return mix64(base_ ^ mix64(i)); }
  std::uint64_t next_bits() { return bits_at(counter_++); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_bits() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal draw (Box-Muller, one variate per pair of uniforms).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), n > 0. Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_bits();
    while (r >= limit) r = next_bits();
    return r % n;
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

/// The k-th standard-normal variate of the stream keyed by `key`.
inline double normal_at(RngKey key, std::uint64_t k) {
  const CounterRng rng(key);
  const double u1 = (static_cast<double>(rng.bits_at(2 * k) >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(rng.bits_at(2 * k + 1) >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace vbkt
