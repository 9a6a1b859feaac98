#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "kdesign/core.hpp"
#include "kdesign/errors.hpp"
#include "kdesign/fft.hpp"
#include "kdesign/rng.hpp"

namespace kdesign {

// ---------------------------------------------------------------------------
// Sensitivity maps
// ---------------------------------------------------------------------------

/// Per-coil complex spatial sensitivities on the full image grid, normalized
/// so the maximum voxel root-sum-of-squares equals 1.
struct SensitivityMaps {
  int coils = 0;
  int n0 = 0;
  std::vector<cxd> values;  // (coil, y, x) row-major

  SensitivityMaps() = default;
  SensitivityMaps(int coils_, int n0_)
      : coils(coils_), n0(n0_), values(static_cast<std::size_t>(coils_) * n0_ * n0_) {}

  std::size_t index(int l, int y, int x) const {
    return (static_cast<std::size_t>(l) * n0 + y) * n0 + x;
  }
  cxd& at(int l, int y, int x) { return values[index(l, y, x)]; }
  const cxd& at(int l, int y, int x) const { return values[index(l, y, x)]; }

  std::span<const cxd> coil(int l) const {
    return {values.data() + static_cast<std::size_t>(l) * n0 * n0,
            static_cast<std::size_t>(n0) * n0};
  }

  /// Sum of |S_l|^2 at a voxel.
  double rss_sq(int y, int x) const {
    double acc = 0.0;
    for (int l = 0; l < coils; ++l) acc += std::norm(at(l, y, x));
    return acc;
  }
};

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

// Base ellipse of every phantom (the object support). Fixed so the
// complexity-0 case has an analytically checkable footprint.
inline constexpr double kPhantomSemiX = 0.70;
inline constexpr double kPhantomSemiY = 0.55;
inline constexpr double kPhantomBaseIntensity = 0.8;
inline constexpr double kPhantomMaxPhase = std::numbers::pi / 4.0;

/// Piecewise-smooth synthetic slice: a fixed base ellipse holding
/// `complexity` randomized interior ellipses and complexity/2 thin
/// high-contrast arcs, with a smooth low-magnitude phase map. Magnitude lies
/// in [0, 1]; everything outside the base ellipse is exactly zero.
inline Image generate_phantom(int width, int complexity, std::uint64_t seed) {
  if (width < 16 || width % 2 != 0) {
    throw InvalidGridsize("phantom: width " + std::to_string(width) +
                          " must be even and >= 16");
  }
  if (complexity < 0) throw InvalidArgument("phantom: complexity must be >= 0");

  rng::Stream s(rng::derive(seed, 0x70684f4dULL));  // "phOM"
  const double half = width / 2.0;
  auto unit = [&](int i) { return (i - half) / half; };

  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t, delta;
  };
  std::vector<Ellipse> blobs;
  for (int i = 0; i < complexity; ++i) {
    const double ang = s.next_in(0.0, 2.0 * std::numbers::pi);
    const double rad = 0.35 * std::sqrt(s.next_double());
    const double theta = s.next_in(0.0, std::numbers::pi);
    const double delta_mag = s.next_in(0.15, 0.45);
    blobs.push_back({rad * std::cos(ang), rad * std::sin(ang), s.next_in(0.06, 0.28),
                     s.next_in(0.06, 0.28), std::cos(theta), std::sin(theta),
                     s.next_sign() * delta_mag});
  }

  struct Arc {
    double cx, cy, rho, theta0, span, intensity;
  };
  std::vector<Arc> arcs;
  for (int i = 0; i < complexity / 2; ++i) {
    const double ang = s.next_in(0.0, 2.0 * std::numbers::pi);
    const double rad = 0.30 * std::sqrt(s.next_double());
    arcs.push_back({rad * std::cos(ang), rad * std::sin(ang), s.next_in(0.15, 0.45),
                    s.next_in(0.0, 2.0 * std::numbers::pi),
                    s.next_in(std::numbers::pi / 3.0, std::numbers::pi),
                    s.next_in(0.9, 0.98)});
  }
  const double arc_half_thickness = 1.5 / width;

  // Low-order polynomial phase, rescaled afterwards so |phi| <= pi/4.
  double p[5];
  for (double& c : p) c = 0.35 * s.next_in(-1.0, 1.0);

  Image img(width);
  std::vector<double> mag(img.size(), 0.0), phase(img.size(), 0.0);
  double max_phase = 0.0;
  for (int y = 0; y < width; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = unit(x), v = unit(y);
      const double su = u / kPhantomSemiX, sv = v / kPhantomSemiY;
      if (su * su + sv * sv > 1.0) continue;
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      double m = kPhantomBaseIntensity;
      for (const Ellipse& e : blobs) {
        const double du = u - e.cx, dv = v - e.cy;
        const double ru = (du * e.cos_t + dv * e.sin_t) / e.a;
        const double rv = (-du * e.sin_t + dv * e.cos_t) / e.b;
        if (ru * ru + rv * rv <= 1.0) m += e.delta;
      }
      for (const Arc& c : arcs) {
        const double du = u - c.cx, dv = v - c.cy;
        const double r = std::hypot(du, dv);
        if (std::abs(r - c.rho) > arc_half_thickness) continue;
        double rel = std::atan2(dv, du) - c.theta0;
        rel -= 2.0 * std::numbers::pi * std::floor(rel / (2.0 * std::numbers::pi));
        if (rel <= c.span) m = std::max(m, c.intensity);
      }
      mag[i] = std::clamp(m, 0.0, 1.0);
      phase[i] = p[0] * u + p[1] * v + p[2] * u * v + p[3] * u * u + p[4] * v * v;
      max_phase = std::max(max_phase, std::abs(phase[i]));
    }
  }
  const double phase_scale = max_phase > kPhantomMaxPhase ? kPhantomMaxPhase / max_phase : 1.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    img.pixels[i] = std::polar(mag[i], phase[i] * phase_scale);
  }
  return img;
}

/// Smooth synthetic coil sensitivities: one Gaussian lobe per coil placed
/// around the FOV perimeter with a gentle linear phase ramp. A single coil
/// degenerates to the constant unit map.
inline SensitivityMaps generate_sensitivities(int coils, int n0, std::uint64_t seed) {
  if (coils < 1) throw InvalidArgument("sensitivities: coils must be >= 1");
  require_even_gridsize(n0, 1 << 20, "sensitivities");

  SensitivityMaps maps(coils, n0);
  if (coils == 1) {
    for (cxd& v : maps.values) v = 1.0;
    return maps;
  }

  rng::Stream s(rng::derive(seed, 0x636f696cULL));  // "coil"
  const double half = n0 / 2.0;
  for (int l = 0; l < coils; ++l) {
    const double jitter = 0.15 * s.next_in(-1.0, 1.0);
    const double ang = 2.0 * std::numbers::pi * (l + jitter) / coils;
    const double cx = 1.15 * std::cos(ang), cy = 1.15 * std::sin(ang);
    const double sigma = 0.85 * (1.0 + 0.1 * s.next_in(-1.0, 1.0));
    const double ramp_u = 0.5 * s.next_in(-1.0, 1.0);
    const double ramp_v = 0.5 * s.next_in(-1.0, 1.0);
    const double theta = s.next_in(0.0, 2.0 * std::numbers::pi);
    for (int y = 0; y < n0; ++y) {
      for (int x = 0; x < n0; ++x) {
        const double u = (x - half) / half, v = (y - half) / half;
        const double d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
        maps.at(l, y, x) = std::polar(std::exp(-d2 / (2.0 * sigma * sigma)),
                                      ramp_u * u + ramp_v * v + theta);
      }
    }
  }
  double max_rss = 0.0;
  for (int y = 0; y < n0; ++y) {
    for (int x = 0; x < n0; ++x) max_rss = std::max(max_rss, maps.rss_sq(y, x));
  }
  const double inv = 1.0 / std::sqrt(max_rss);
  for (cxd& v : maps.values) v *= inv;
  return maps;
}

// ---------------------------------------------------------------------------
// Forward model and coil combination
// ---------------------------------------------------------------------------

/// s_l = unitary DFT of (S_l (.) x).
inline MultiCoilKSpace image_to_kspace(const Image& x, const SensitivityMaps& maps) {
  if (x.n != maps.n0) {
    throw ShapeError("image_to_kspace: image " + std::to_string(x.n) + " vs maps " +
                     std::to_string(maps.n0));
  }
  MultiCoilKSpace ks(maps.coils, maps.n0);
  std::vector<cxd> tmp(x.size());
  for (int l = 0; l < maps.coils; ++l) {
    const auto s = maps.coil(l);
    for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = s[i] * x.pixels[i];
    fft::dft2(tmp.data(), ks.coil(l).data(), x.n, x.n, FFTW_FORWARD);
  }
  return ks;
}

/// x = sum_l conj(S_l) f_l / sum_l |S_l|^2, zero where the denominator is 0.
inline Image sense_combine(const std::vector<std::vector<cxd>>& coil_images,
                           const SensitivityMaps& maps) {
  if (static_cast<int>(coil_images.size()) != maps.coils) {
    throw ShapeError("sense_combine: coil count mismatch");
  }
  Image out(maps.n0);
  for (int y = 0; y < maps.n0; ++y) {
    for (int x = 0; x < maps.n0; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * maps.n0 + x;
      cxd num = 0.0;
      double den = 0.0;
      for (int l = 0; l < maps.coils; ++l) {
        const cxd s = maps.at(l, y, x);
        num += std::conj(s) * coil_images[static_cast<std::size_t>(l)][i];
        den += std::norm(s);
      }
      out.pixels[i] = den > 0.0 ? num / den : 0.0;
    }
  }
  return out;
}

/// Noise-free low-resolution reference: zero-pad to the full grid, inverse
/// DFT per coil, SENSE combine.
struct ReferenceImage {
  Image image;
  int source_n = 0;

  int n0() const { return image.n; }
};

inline ReferenceImage reference_image(const MultiCoilKSpace& ks, const SensitivityMaps& maps,
                                      int n0) {
  if (ks.n > n0) {
    throw InvalidGridsize("reference_image: kspace gridsize " + std::to_string(ks.n) +
                          " exceeds target " + std::to_string(n0));
  }
  if (n0 != maps.n0 || ks.coils != maps.coils) {
    throw ShapeError("reference_image: maps do not match requested grid");
  }
  const MultiCoilKSpace padded = zero_pad_kspace(ks, n0);
  std::vector<std::vector<cxd>> coil_images(static_cast<std::size_t>(ks.coils));
  for (int l = 0; l < ks.coils; ++l) {
    coil_images[static_cast<std::size_t>(l)] = fft::inverse2(padded.coil(l), n0, n0);
  }
  return ReferenceImage{sense_combine(coil_images, maps), ks.n};
}

/// Scales a slice so the maximum voxel magnitude over all per-coil
/// inverse-DFT images equals 1.
inline MultiCoilKSpace normalize_slice(const MultiCoilKSpace& ks) {
  double max_mag = 0.0;
  for (int l = 0; l < ks.coils; ++l) {
    const auto img = fft::inverse2(ks.coil(l), ks.n, ks.n);
    for (const cxd& v : img) max_mag = std::max(max_mag, std::abs(v));
  }
  if (max_mag == 0.0) throw DegenerateInput("normalize_slice: all-zero slice");
  MultiCoilKSpace out = ks;
  const double inv = 1.0 / max_mag;
  for (cxd& v : out.samples) v *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

enum class Split { Train, Validation, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  throw InvalidArgument("split_name: unknown split");
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw InvalidArgument("unknown split name: " + name);
}

/// Noise-free normalized slices plus the shared sensitivity maps.
struct Dataset {
  int n0 = 0;
  SensitivityMaps maps;
  std::vector<MultiCoilKSpace> slices;
  std::vector<Split> splits;

  std::size_t size() const { return slices.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
      if (splits[i] == s) out.push_back(i);
    }
    return out;
  }
};

/// Synthesizes a full dataset: shared coil maps, one normalized phantom
/// slice per entry, contiguous train/validation/test split assignment.
inline Dataset generate_dataset(int n0, int coils, int t_train, int t_validation, int t_test,
                                int complexity, std::uint64_t seed) {
  if (t_train < 0 || t_validation < 0 || t_test < 0 || t_train + t_validation + t_test < 1) {
    throw InvalidArgument("dataset: need at least one slice");
  }
  Dataset ds;
  ds.n0 = n0;
  ds.maps = generate_sensitivities(coils, n0, rng::derive(seed, 1));
  const int total = t_train + t_validation + t_test;
  for (int t = 0; t < total; ++t) {
    const Image img =
        generate_phantom(n0, complexity, rng::derive(seed, 2, static_cast<std::uint64_t>(t)));
    ds.slices.push_back(normalize_slice(image_to_kspace(img, ds.maps)));
    ds.splits.push_back(t < t_train              ? Split::Train
                        : t < t_train + t_validation ? Split::Validation
                                                     : Split::Test);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Noise calibration
// ---------------------------------------------------------------------------

/// Sigma that yields the requested SNR in the baseline reconstruction: mean
/// reference magnitude over a central disk divided by the analytic noise
/// standard deviation of the zero-filled SENSE pipeline at the full grid
/// with w0 averages. Noise variance per combined voxel is
/// sigma^2 / (w0 * sum_l |S_l|^2); the mask-level std pools that variance.
inline double calibrate_sigma(const Dataset& ds, const AcquisitionBudget& budget,
                              double target_snr, double mask_radius = -1.0) {
  if (std::isinf(target_snr)) return 0.0;
  if (!(target_snr > 0.0)) throw InvalidArgument("calibrate_sigma: target SNR must be > 0");
  if (ds.n0 != budget.n0 || ds.maps.n0 != budget.n0) {
    throw ShapeError("calibrate_sigma: dataset grid does not match budget");
  }
  if (ds.slices.empty()) throw DegenerateInput("calibrate_sigma: empty dataset");
  if (mask_radius < 0.0) mask_radius = budget.n0 / 8.0;

  const double half = budget.n0 / 2.0;
  std::vector<std::size_t> mask;
  for (int y = 0; y < budget.n0; ++y) {
    for (int x = 0; x < budget.n0; ++x) {
      if (std::hypot(y - half, x - half) < mask_radius && ds.maps.rss_sq(y, x) > 0.0) {
        mask.push_back(static_cast<std::size_t>(y) * budget.n0 + x);
      }
    }
  }
  if (mask.empty()) throw DegenerateInput("calibrate_sigma: empty calibration mask");

  double signal = 0.0;
  for (const MultiCoilKSpace& slice : ds.slices) {
    const ReferenceImage r = reference_image(slice, ds.maps, budget.n0);
    for (std::size_t i : mask) signal += std::abs(r.image.pixels[i]);
  }
  signal /= static_cast<double>(mask.size() * ds.slices.size());
  if (signal == 0.0) throw DegenerateInput("calibrate_sigma: zero signal in mask");

  double inv_q = 0.0;
  for (std::size_t i : mask) {
    const int y = static_cast<int>(i) / budget.n0, x = static_cast<int>(i) % budget.n0;
    inv_q += 1.0 / (budget.w0 * ds.maps.rss_sq(y, x));
  }
  const double noise_std_per_sigma = std::sqrt(inv_q / static_cast<double>(mask.size()));
  return signal / (target_snr * noise_std_per_sigma);
}

}  // namespace kdesign
