#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

namespace kdesign::rng {

// SplitMix64 finalizer (Steele/Lea/Vigna). Full-avalanche bijection on u64.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

/// Derives an independent stream key from a parent key and context ids.
/// Keys depend only on the id sequence, never on draw order, so any number
/// of streams can be split off a seed and consumed in parallel.
inline std::uint64_t derive(std::uint64_t key) { return key; }

template <typename... Rest>
std::uint64_t derive(std::uint64_t key, std::uint64_t id, Rest... rest) {
  return derive(splitmix64((key + kGamma) ^ splitmix64(id + kGamma)), rest...);
}

/// Counter-based generator: draw i of a stream is a pure function of
/// (key, i). Replayable and cheap to fork.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return splitmix64(key_ + kGamma * ++counter_); }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double next_in(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  /// Circular complex Gaussian with E|z|^2 = 1 (variance 1/2 per component).
  std::complex<double> next_cnormal() {
    const double s = std::numbers::sqrt2 / 2.0;
    const double re = next_normal();
    const double im = next_normal();
    return {re * s, im * s};
  }

  /// Rademacher +/-1.
  double next_sign() { return (next_u64() & 1u) ? 1.0 : -1.0; }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_below(i)]);
    }
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace kdesign::rng
