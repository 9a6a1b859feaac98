#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kdesign/core.hpp"
#include "kdesign/errors.hpp"

namespace kdesign {

/// Training loss J(x, r) = mean_i |x_i - r_i|^2. The per-pixel mean (rather
/// than the plain squared norm) keeps gradient magnitudes independent of the
/// grid size, which is what the training-rate table assumes.
inline double mse_loss(std::span<const cxd> x, std::span<const cxd> r) {
  if (x.size() != r.size()) {
    throw ShapeError("mse_loss: sizes " + std::to_string(x.size()) + " vs " +
                     std::to_string(r.size()));
  }
  if (x.empty()) throw DegenerateInput("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::norm(x[i] - r[i]);
  return acc / static_cast<double>(x.size());
}

/// ||x - r||_2 / ||r||_2 on complex images.
inline double nrmse(std::span<const cxd> x, std::span<const cxd> r) {
  if (x.size() != r.size()) {
    throw ShapeError("nrmse: sizes " + std::to_string(x.size()) + " vs " +
                     std::to_string(r.size()));
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += std::norm(x[i] - r[i]);
    den += std::norm(r[i]);
  }
  if (den == 0.0) throw DegenerateInput("nrmse: zero reference image");
  return std::sqrt(num / den);
}

namespace detail {

/// Half-sample symmetric reflection: ..., 1, 0 | 0, 1, ..., n-1 | n-1, n-2.
inline int reflect_symmetric(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    constexpr int half = 5;  // 11x11
    constexpr double sigma = 1.5;
    std::vector<double> g(11 * 11);
    double sum = 0.0;
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        g[static_cast<std::size_t>(dy + half) * 11 + (dx + half)] = v;
        sum += v;
      }
    }
    for (double& v : g) v /= sum;
    return g;
  }();
  return w;
}

}  // namespace detail

/// Mean structural similarity of |x| against |r|: 11x11 Gaussian window
/// (std 1.5), K1 = 0.01, K2 = 0.03, dynamic range max|r| (1 if the reference
/// is identically zero), symmetric edge padding.
inline double ssim(std::span<const cxd> x, std::span<const cxd> r, int rows, int cols) {
  if (x.size() != r.size() ||
      x.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw ShapeError("ssim: sizes " + std::to_string(x.size()) + " vs " +
                     std::to_string(r.size()) + " for " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  std::vector<double> a(x.size()), b(r.size());
  double dyn = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a[i] = std::abs(x[i]);
    b[i] = std::abs(r[i]);
    dyn = std::max(dyn, b[i]);
  }
  if (dyn == 0.0) dyn = 1.0;
  const double c1 = (0.01 * dyn) * (0.01 * dyn);
  const double c2 = (0.03 * dyn) * (0.03 * dyn);
  const std::vector<double>& g = detail::ssim_window();
  constexpr int half = 5;

  double total = 0.0;
  for (int y = 0; y < rows; ++y) {
    for (int xx = 0; xx < cols; ++xx) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int dy = -half; dy <= half; ++dy) {
        const int sy = detail::reflect_symmetric(y + dy, rows);
        for (int dx = -half; dx <= half; ++dx) {
          const int sx = detail::reflect_symmetric(xx + dx, cols);
          const double wgt = g[static_cast<std::size_t>(dy + half) * 11 + (dx + half)];
          mu_a += wgt * a[static_cast<std::size_t>(sy) * cols + sx];
          mu_b += wgt * b[static_cast<std::size_t>(sy) * cols + sx];
        }
      }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int dy = -half; dy <= half; ++dy) {
        const int sy = detail::reflect_symmetric(y + dy, rows);
        for (int dx = -half; dx <= half; ++dx) {
          const int sx = detail::reflect_symmetric(xx + dx, cols);
          const double wgt = g[static_cast<std::size_t>(dy + half) * 11 + (dx + half)];
          const double da = a[static_cast<std::size_t>(sy) * cols + sx] - mu_a;
          const double db = b[static_cast<std::size_t>(sy) * cols + sx] - mu_b;
          var_a += wgt * da * da;
          var_b += wgt * db * db;
          cov += wgt * da * db;
        }
      }
      total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / (static_cast<double>(rows) * cols);
}

inline double ssim(const Image& x, const Image& r) {
  return ssim(x.pixels, r.pixels, r.n, r.n);
}

/// Per-slice metric values with summary statistics.
struct MetricReport {
  std::vector<double> nrmse_values;
  std::vector<double> ssim_values;

  void add(double nrmse_v, double ssim_v) {
    nrmse_values.push_back(nrmse_v);
    ssim_values.push_back(ssim_v);
  }

  static double mean(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  }

  /// Sample standard deviation; 0 for fewer than two values.
  static double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
  }

  double nrmse_mean() const { return mean(nrmse_values); }
  double nrmse_std() const { return stddev(nrmse_values); }
  double ssim_mean() const { return mean(ssim_values); }
  double ssim_std() const { return stddev(ssim_values); }
};

}  // namespace kdesign
