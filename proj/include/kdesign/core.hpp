#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kdesign/errors.hpp"
#include "kdesign/fft.hpp"
#include "kdesign/rng.hpp"

namespace kdesign {

using cxd = std::complex<double>;

// ---------------------------------------------------------------------------
// Index conventions.
//
// K-space arrays and images are stored in FFT order: the DC sample sits at
// flat index (0, 0) and no fftshift copies happen in inner loops. Centered
// indices run m = -n/2 .. n/2-1 with DC at m = 0. Rows are phase-encode
// lines, columns are readout samples.
// ---------------------------------------------------------------------------

inline int centered_to_fft(int m, int n) { return m >= 0 ? m : m + n; }
inline int fft_to_centered(int r, int n) { return r < n - n / 2 ? r : r - n; }

inline void require_even_gridsize(int n, int max_n, const char* what) {
  if (n < 2 || n > max_n || n % 2 != 0) {
    throw InvalidGridsize(std::string(what) + ": gridsize " + std::to_string(n) +
                          " must be even and in [2, " + std::to_string(max_n) + "]");
  }
}

/// N x N complex image, row-major.
struct Image {
  int n = 0;
  std::vector<cxd> pixels;

  Image() = default;
  explicit Image(int n_) : n(n_), pixels(static_cast<std::size_t>(n_) * n_) {}

  cxd& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * n + x]; }
  const cxd& at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * n + x]; }
  std::size_t size() const { return pixels.size(); }
};

inline double norm2(std::span<const cxd> v) {
  double acc = 0.0;
  for (const cxd& x : v) acc += std::norm(x);
  return std::sqrt(acc);
}

inline double norm2_sq(std::span<const cxd> v) {
  double acc = 0.0;
  for (const cxd& x : v) acc += std::norm(x);
  return acc;
}

/// <a, b> = sum a_i conj(b_i).
inline cxd dot(std::span<const cxd> a, std::span<const cxd> b) {
  cxd acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * std::conj(b[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Acquisition budget
// ---------------------------------------------------------------------------

/// The reference experiment that fixes total scan time: an n0 x n0 grid
/// acquired with w0 uniform averages at unaveraged per-sample noise sigma.
/// Every candidate design must spend exactly total_tr() repetitions.
struct AcquisitionBudget {
  int n0 = 0;
  int w0 = 0;
  double sigma = 0.0;

  AcquisitionBudget(int n0_, int w0_, double sigma_) : n0(n0_), w0(w0_), sigma(sigma_) {
    require_even_gridsize(n0, 1 << 20, "budget");
    if (w0 < 1) throw InvalidArgument("budget: w0 must be >= 1, got " + std::to_string(w0));
    if (!(sigma >= 0.0)) throw InvalidArgument("budget: sigma must be >= 0");
  }

  std::int64_t total_tr() const { return static_cast<std::int64_t>(w0) * n0; }

  /// Required sum of effective averages at gridsize n: w0 * n0^2 / n.
  double effective_budget(int n) const {
    return static_cast<double>(static_cast<std::int64_t>(w0) * n0 * n0) / n;
  }

  /// Uniform effective level w0 * n0^2 / n^2.
  double uniform_level(int n) const { return effective_budget(n) / n; }
};

// ---------------------------------------------------------------------------
// Averaging patterns
// ---------------------------------------------------------------------------

/// Effective averages per phase-encode line, centered order (entry i is the
/// line m = i - n/2). Strictly positive; the sum must match the scan-time
/// budget to 1e-9 relative.
class AveragingPattern {
 public:
  static constexpr double kBudgetTolerance = 1e-9;

  AveragingPattern(int n, std::vector<double> effective, const AcquisitionBudget& budget)
      : n_(n), n0_(budget.n0), effective_(std::move(effective)) {
    require_even_gridsize(n_, budget.n0, "pattern");
    if (static_cast<int>(effective_.size()) != n_) {
      throw ShapeError("pattern: expected " + std::to_string(n_) + " entries, got " +
                       std::to_string(effective_.size()));
    }
    double sum = 0.0;
    for (double w : effective_) {
      if (!(w > 0.0)) throw InvalidArgument("pattern: effective averages must be > 0");
      sum += w;
    }
    const double target = budget.effective_budget(n_);
    if (std::abs(sum - target) > kBudgetTolerance * target) {
      throw InvalidArgument("pattern: sum " + std::to_string(sum) + " violates budget " +
                            std::to_string(target));
    }
  }

  int n() const { return n_; }
  int n0() const { return n0_; }
  const std::vector<double>& effective() const { return effective_; }

  /// m in [-n/2, n/2).
  double at_centered(int m) const { return effective_[static_cast<std::size_t>(m + n_ / 2)]; }

  double sum() const {
    double acc = 0.0;
    for (double w : effective_) acc += w;
    return acc;
  }

 private:
  int n_ = 0;
  int n0_ = 0;
  std::vector<double> effective_;
};

/// Actual (integer) averages per phase-encode line; sums exactly to the TR
/// budget. Zero-count lines are allowed; downstream reconstruction excludes
/// them from the data term.
class IntegerAveragingPattern {
 public:
  IntegerAveragingPattern(int n, std::vector<std::int64_t> counts,
                          const AcquisitionBudget& budget)
      : n_(n), counts_(std::move(counts)) {
    require_even_gridsize(n_, budget.n0, "integer pattern");
    if (static_cast<int>(counts_.size()) != n_) {
      throw ShapeError("integer pattern: expected " + std::to_string(n_) + " entries, got " +
                       std::to_string(counts_.size()));
    }
    std::int64_t sum = 0;
    for (std::int64_t q : counts_) {
      if (q < 0) throw InvalidArgument("integer pattern: counts must be >= 0");
      sum += q;
    }
    if (sum != budget.total_tr()) {
      throw InvalidArgument("integer pattern: sum " + std::to_string(sum) +
                            " != TR budget " + std::to_string(budget.total_tr()));
    }
  }

  int n() const { return n_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  std::int64_t at_centered(int m) const { return counts_[static_cast<std::size_t>(m + n_ / 2)]; }

  std::int64_t sum() const {
    std::int64_t acc = 0;
    for (std::int64_t q : counts_) acc += q;
    return acc;
  }

 private:
  int n_ = 0;
  std::vector<std::int64_t> counts_;
};

// ---------------------------------------------------------------------------
// Multi-coil k-space
// ---------------------------------------------------------------------------

/// L-channel complex samples on an n x n grid, FFT order, laid out
/// (coil, phase-encode row, readout column) row-major.
struct MultiCoilKSpace {
  int coils = 0;
  int n = 0;
  std::vector<cxd> samples;

  MultiCoilKSpace() = default;
  MultiCoilKSpace(int coils_, int n_)
      : coils(coils_), n(n_), samples(static_cast<std::size_t>(coils_) * n_ * n_) {
    if (coils < 1) throw InvalidArgument("kspace: coils must be >= 1");
    require_even_gridsize(n, 1 << 20, "kspace");
  }

  std::size_t index(int l, int r, int c) const {
    return (static_cast<std::size_t>(l) * n + r) * n + c;
  }
  cxd& at(int l, int r, int c) { return samples[index(l, r, c)]; }
  const cxd& at(int l, int r, int c) const { return samples[index(l, r, c)]; }

  /// Centered access: m = phase encode, k = readout, both in [-n/2, n/2).
  const cxd& at_centered(int l, int m, int k) const {
    return at(l, centered_to_fft(m, n), centered_to_fft(k, n));
  }
  cxd& at_centered(int l, int m, int k) {
    return at(l, centered_to_fft(m, n), centered_to_fft(k, n));
  }

  std::span<cxd> coil(int l) {
    return {samples.data() + static_cast<std::size_t>(l) * n * n,
            static_cast<std::size_t>(n) * n};
  }
  std::span<const cxd> coil(int l) const {
    return {samples.data() + static_cast<std::size_t>(l) * n * n,
            static_cast<std::size_t>(n) * n};
  }

  void require_finite() const {
    for (const cxd& s : samples) {
      if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) {
        throw NumericalFailure("kspace contains non-finite samples");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Uniform averaging at gridsize n: every line gets w0 * n0^2 / n^2
/// effective averages, spending the budget exactly.
inline AveragingPattern uniform_pattern(int n, const AcquisitionBudget& budget) {
  require_even_gridsize(n, budget.n0, "uniform_pattern");
  return AveragingPattern(n, std::vector<double>(n, budget.uniform_level(n)), budget);
}

/// w_m = q_m * n0 / n. Requires strictly positive counts; use
/// effective_weights() when zero-count lines must be representable.
inline AveragingPattern effective_from_actual(const IntegerAveragingPattern& q,
                                              const AcquisitionBudget& budget) {
  std::vector<double> w(q.counts().size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (q.counts()[i] == 0) {
      throw DegenerateInput("effective_from_actual: zero-count line " + std::to_string(i) +
                            " cannot form a strictly positive pattern");
    }
    w[i] = static_cast<double>(q.counts()[i] * budget.n0) / q.n();
  }
  return AveragingPattern(q.n(), std::move(w), budget);
}

/// Lenient variant of effective_from_actual: zero-count lines map to weight
/// zero (infinite noise variance; excluded from reconstruction data terms).
inline std::vector<double> effective_weights(const IntegerAveragingPattern& q,
                                             const AcquisitionBudget& budget) {
  std::vector<double> w(q.counts().size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<double>(q.counts()[i] * budget.n0) / q.n();
  }
  return w;
}

/// Inverse of effective_from_actual; errors if the implied counts are not
/// integers (to 1e-6).
inline IntegerAveragingPattern actual_from_effective(const AveragingPattern& w,
                                                     const AcquisitionBudget& budget) {
  std::vector<std::int64_t> q(w.effective().size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double actual = w.effective()[i] * w.n() / budget.n0;
    q[i] = std::llround(actual);
    if (std::abs(actual - static_cast<double>(q[i])) > 1e-6) {
      throw InvalidArgument("actual_from_effective: entry " + std::to_string(i) +
                            " is not integer-valued: " + std::to_string(actual));
    }
  }
  return IntegerAveragingPattern(w.n(), std::move(q), budget);
}

/// Keeps the centered n x n block, discarding higher frequencies.
inline MultiCoilKSpace crop_kspace(const MultiCoilKSpace& full, int n) {
  require_even_gridsize(n, full.n, "crop_kspace");
  if (n == full.n) return full;
  MultiCoilKSpace out(full.coils, n);
  for (int l = 0; l < full.coils; ++l) {
    for (int m = -n / 2; m < n / 2; ++m) {
      for (int k = -n / 2; k < n / 2; ++k) {
        out.at_centered(l, m, k) = full.at_centered(l, m, k);
      }
    }
  }
  return out;
}

/// Embeds an n x n grid in the center of an n0 x n0 grid, zeros outside.
/// Adjoint of crop_kspace.
inline MultiCoilKSpace zero_pad_kspace(const MultiCoilKSpace& ks, int n0) {
  if (n0 < ks.n) {
    throw InvalidGridsize("zero_pad_kspace: target " + std::to_string(n0) + " < source " +
                          std::to_string(ks.n));
  }
  require_even_gridsize(n0, 1 << 20, "zero_pad_kspace");
  if (n0 == ks.n) return ks;
  MultiCoilKSpace out(ks.coils, n0);
  const int n = ks.n;
  for (int l = 0; l < ks.coils; ++l) {
    for (int m = -n / 2; m < n / 2; ++m) {
      for (int k = -n / 2; k < n / 2; ++k) {
        out.at_centered(l, m, k) = ks.at_centered(l, m, k);
      }
    }
  }
  return out;
}

/// Unit-variance circular complex Gaussian noise (E|z|^2 = 1 per sample).
/// Each (coil, line) pair draws from its own derived stream, so the result
/// is independent of traversal order.
inline MultiCoilKSpace draw_unit_noise(int coils, int n, std::uint64_t key) {
  MultiCoilKSpace z(coils, n);
  for (int l = 0; l < coils; ++l) {
    for (int r = 0; r < n; ++r) {
      rng::Stream stream(rng::derive(key, static_cast<std::uint64_t>(l),
                                     static_cast<std::uint64_t>(r)));
      for (int c = 0; c < n; ++c) z.at(l, r, c) = stream.next_cnormal();
    }
  }
  return z;
}

/// d = s + (sigma / sqrt(w_m)) * z with the line weight applied to every
/// readout sample and coil of phase-encode line m.
inline MultiCoilKSpace add_scaled_noise(const MultiCoilKSpace& clean,
                                        std::span<const double> w_centered, double sigma,
                                        const MultiCoilKSpace& z) {
  if (z.coils != clean.coils || z.n != clean.n) {
    throw ShapeError("add_scaled_noise: noise grid does not match data");
  }
  if (static_cast<int>(w_centered.size()) != clean.n) {
    throw ShapeError("add_scaled_noise: pattern length " + std::to_string(w_centered.size()) +
                     " != gridsize " + std::to_string(clean.n));
  }
  MultiCoilKSpace out = clean;
  if (sigma == 0.0) return out;
  const int n = clean.n;
  for (int l = 0; l < clean.coils; ++l) {
    for (int r = 0; r < n; ++r) {
      const double wm = w_centered[static_cast<std::size_t>(fft_to_centered(r, n) + n / 2)];
      const double scale = sigma / std::sqrt(wm);
      for (int c = 0; c < n; ++c) out.at(l, r, c) += scale * z.at(l, r, c);
    }
  }
  return out;
}

/// Simulated noisy acquisition: s + (1/sqrt(w)) (.) z with z i.i.d. circular
/// complex Gaussian of variance sigma^2. Deterministic given seed.
inline MultiCoilKSpace simulate_noisy(const MultiCoilKSpace& clean, const AveragingPattern& w,
                                      double sigma, std::uint64_t seed) {
  if (w.n() != clean.n) {
    throw ShapeError("simulate_noisy: pattern gridsize " + std::to_string(w.n()) +
                     " != data gridsize " + std::to_string(clean.n));
  }
  if (!(sigma >= 0.0)) throw InvalidArgument("simulate_noisy: sigma must be >= 0");
  if (sigma == 0.0) return clean;
  const MultiCoilKSpace z = draw_unit_noise(clean.coils, clean.n, seed);
  return add_scaled_noise(clean, w.effective(), sigma, z);
}

/// Total repetitions implied by a pattern. Integer patterns count exactly;
/// continuous patterns give (n/n0) * sum(w).
inline std::int64_t scan_time(const IntegerAveragingPattern& q) { return q.sum(); }

inline double scan_time(const AveragingPattern& w) {
  return w.sum() * w.n() / static_cast<double>(w.n0());
}

}  // namespace kdesign
