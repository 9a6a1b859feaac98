#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kdesign/core.hpp"
#include "kdesign/errors.hpp"
#include "kdesign/metrics.hpp"
#include "kdesign/recon.hpp"
#include "kdesign/rng.hpp"

namespace kdesign {

/// One training slice prepared for a candidate gridsize: cropped clean
/// k-space, the matching low-resolution reference, and a fixed
/// unit-variance noise draw that is rescaled by sigma/sqrt(w) every time w
/// changes (so the training loss is a deterministic function of w).
struct TrainSlice {
  MultiCoilKSpace clean;  // at n
  Image reference;        // reconstruction target at the full grid
  MultiCoilKSpace noise;  // unit-variance draw at n
};

inline TrainSlice make_train_slice(const MultiCoilKSpace& full, const SensitivityMaps& maps,
                                   int n, std::uint64_t noise_key) {
  TrainSlice slice;
  slice.clean = crop_kspace(full, n);
  slice.reference = reference_image(slice.clean, maps, maps.n0).image;
  slice.noise = draw_unit_noise(full.coils, n, noise_key);
  return slice;
}

/// d = s + sigma/sqrt(w_m) (.) z. Lines with w_m = 0 are not acquired at
/// all and come back as zeros.
inline MultiCoilKSpace noisy_data(const TrainSlice& slice, std::span<const double> w_centered,
                                  double sigma) {
  const int n = slice.clean.n;
  if (static_cast<int>(w_centered.size()) != n) {
    throw ShapeError("noisy_data: pattern length != gridsize");
  }
  MultiCoilKSpace d = slice.clean;
  for (int l = 0; l < d.coils; ++l) {
    for (int r = 0; r < n; ++r) {
      const double wm = w_centered[static_cast<std::size_t>(fft_to_centered(r, n) + n / 2)];
      if (wm == 0.0) {
        for (int c = 0; c < n; ++c) d.at(l, r, c) = 0.0;
      } else if (sigma > 0.0) {
        const double scale = sigma / std::sqrt(wm);
        for (int c = 0; c < n; ++c) d.at(l, r, c) += scale * slice.noise.at(l, r, c);
      }
    }
  }
  return d;
}

struct LossGradients {
  double loss = 0.0;
  std::vector<double> window_grad;  // dJ/dh, centered order (Apodized)
  double lambda_grad = 0.0;         // dJ/d lambda (SenseTV)
  std::vector<double> w_grad;       // dJ/dw, centered order
};

struct GradientRequest {
  bool params = false;
  bool weights = false;
  std::uint64_t spsa_key = 0;  // perturbation stream for the SenseTV w estimator
};

namespace detail {

inline void require_finite_loss(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw NumericalFailure(std::string(where) + ": non-finite loss");
  }
}

/// Shared by ZeroFilled (h == 1) and Apodized: exact analytic gradients of
/// the mean batch loss with respect to the window and the averaging
/// pattern. The reconstruction is x = C F^-1 Z (h (.) d) with C the SENSE
/// combine; for e = x - r and y_l = crop(F(S_l (.) e/q)), up to the common
/// 1/N0^2 pixel-mean factor:
///   dJ/dh[k]  = 2 Re sum_l d_l[k] conj(y_l[k])
///   dJ/dw_m   = -sigma w_m^{-3/2} Re sum_l sum_{k in line m}
///               z_l[k] conj(h[k] y_l[k])
/// (the w dependence enters only through the noise scaling sigma/sqrt(w)).
inline LossGradients linear_recon_loss(std::span<const TrainSlice* const> batch,
                                       std::span<const double> w_centered, double sigma,
                                       const ReconParams& params, const EncodingModel& model,
                                       const GradientRequest& req) {
  const int n = model.n;
  const int n0 = model.n0;
  const bool windowed = params.method == ReconMethod::Apodized;
  LossGradients out;
  if (req.params && windowed) out.window_grad.assign(static_cast<std::size_t>(n) * n, 0.0);
  if (req.weights) out.w_grad.assign(static_cast<std::size_t>(n), 0.0);

  std::vector<double> q(static_cast<std::size_t>(n0) * n0);
  for (int y = 0; y < n0; ++y) {
    for (int x = 0; x < n0; ++x) q[static_cast<std::size_t>(y) * n0 + x] = model.maps.rss_sq(y, x);
  }

  std::vector<cxd> scaled(q.size());
  for (const TrainSlice* slice : batch) {
    const MultiCoilKSpace d = noisy_data(*slice, w_centered, sigma);
    const Image x = windowed ? apodized_recon(d, params, model) : zero_filled_recon(d, model);
    std::vector<cxd> e(x.pixels);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] -= slice->reference.pixels[i];
    out.loss += mse_loss(x.pixels, slice->reference.pixels);

    if (!out.window_grad.empty() || !out.w_grad.empty()) {
      for (std::size_t i = 0; i < e.size(); ++i) {
        scaled[i] = q[i] > 0.0 ? e[i] / q[i] : cxd{0.0, 0.0};
      }
      for (int l = 0; l < model.maps.coils; ++l) {
        const auto s = model.maps.coil(l);
        std::vector<cxd> tmp(scaled.size());
        for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = s[i] * scaled[i];
        std::vector<cxd> spec(tmp.size());
        fft::dft2(tmp.data(), spec.data(), n0, n0, FFTW_FORWARD);
        for (int m = -n / 2; m < n / 2; ++m) {
          const int r0 = centered_to_fft(m, n0), r1 = centered_to_fft(m, n);
          double line_acc = 0.0;
          for (int k = -n / 2; k < n / 2; ++k) {
            const cxd y = spec[static_cast<std::size_t>(r0) * n0 + centered_to_fft(k, n0)];
            const cxd dv = d.at(l, r1, centered_to_fft(k, n));
            const std::size_t wi = static_cast<std::size_t>(m + n / 2) * n + (k + n / 2);
            if (!out.window_grad.empty()) {
              out.window_grad[wi] += 2.0 * (dv * std::conj(y)).real();
            }
            if (!out.w_grad.empty()) {
              const double h = windowed ? params.window[wi] : 1.0;
              const cxd z = slice->noise.at(l, r1, centered_to_fft(k, n));
              line_acc += (z * std::conj(h * y)).real();
            }
          }
          if (!out.w_grad.empty()) {
            const double wm = w_centered[static_cast<std::size_t>(m + n / 2)];
            if (sigma > 0.0 && wm > 0.0) {
              out.w_grad[static_cast<std::size_t>(m + n / 2)] -=
                  sigma * std::pow(wm, -1.5) * line_acc;
            }
          }
        }
      }
    }
  }

  // The per-slice loss is a pixel mean, so the gradients carry the same
  // 1/N0^2 factor.
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const double grad_scale = inv_batch / (static_cast<double>(n0) * n0);
  out.loss *= inv_batch;
  for (double& g : out.window_grad) g *= grad_scale;
  for (double& g : out.w_grad) g *= grad_scale;
  detail::require_finite_loss(out.loss, "loss_and_gradients");
  return out;
}

inline double sense_tv_batch_loss(std::span<const TrainSlice* const> batch,
                                  std::span<const double> w_centered, double sigma,
                                  double lambda, const EncodingModel& model,
                                  const AdmmConfig& cfg) {
  double acc = 0.0;
  for (const TrainSlice* slice : batch) {
    const MultiCoilKSpace d = noisy_data(*slice, w_centered, sigma);
    const Image x = sense_tv_recon(d, w_centered, ReconParams::sense_tv(lambda), model, cfg);
    acc += mse_loss(x.pixels, slice->reference.pixels);
  }
  return acc / static_cast<double>(batch.size());
}

/// SenseTV estimators: lambda by central finite differences, w by
/// simultaneous perturbation (one +/- Rademacher pair per call). The
/// reported loss is the mean of the evaluations actually made.
inline LossGradients sense_tv_loss(std::span<const TrainSlice* const> batch,
                                   std::span<const double> w_centered, double sigma,
                                   const ReconParams& params, const EncodingModel& model,
                                   const AdmmConfig& cfg, const GradientRequest& req) {
  LossGradients out;
  double loss_sum = 0.0;
  int evals = 0;

  if (req.params) {
    const double step = 1e-3 * std::max(params.lambda, 1e-3);
    const double hi = params.lambda + step;
    const double lo = std::max(params.lambda - step, 0.0);
    const double loss_hi = sense_tv_batch_loss(batch, w_centered, sigma, hi, model, cfg);
    const double loss_lo = sense_tv_batch_loss(batch, w_centered, sigma, lo, model, cfg);
    out.lambda_grad = (loss_hi - loss_lo) / (hi - lo);
    loss_sum += loss_hi + loss_lo;
    evals += 2;
  }

  if (req.weights) {
    const std::size_t n = w_centered.size();
    double mean_w = 0.0;
    for (double v : w_centered) mean_w += v;
    mean_w /= static_cast<double>(n);
    const double delta = 1e-2 * mean_w;
    const double floor = 1e-4 * mean_w;

    rng::Stream s(req.spsa_key);
    std::vector<double> plus(n), minus(n), sign(n);
    for (std::size_t m = 0; m < n; ++m) {
      sign[m] = s.next_sign();
      plus[m] = std::max(w_centered[m] + delta * sign[m], floor);
      minus[m] = std::max(w_centered[m] - delta * sign[m], floor);
    }
    const double loss_plus = sense_tv_batch_loss(batch, plus, sigma, params.lambda, model, cfg);
    const double loss_minus = sense_tv_batch_loss(batch, minus, sigma, params.lambda, model, cfg);
    out.w_grad.assign(n, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
      const double span = plus[m] - minus[m];
      if (span != 0.0) out.w_grad[m] = (loss_plus - loss_minus) / span;
    }
    loss_sum += loss_plus + loss_minus;
    evals += 2;
  }

  if (evals == 0) {
    loss_sum = sense_tv_batch_loss(batch, w_centered, sigma, params.lambda, model, cfg);
    evals = 1;
  }
  out.loss = loss_sum / evals;
  detail::require_finite_loss(out.loss, "loss_and_gradients");
  return out;
}

}  // namespace detail

/// Mean batch loss J = mean_t mse(g(s_t + sigma/sqrt(w) z_t), r_t) and its
/// gradients for the requested parameters. Apodized/ZeroFilled gradients
/// are exact analytic expressions; SenseTV uses finite-difference (lambda)
/// and simultaneous-perturbation (w) estimators.
inline LossGradients loss_and_gradients(std::span<const TrainSlice* const> batch,
                                        std::span<const double> w_centered, double sigma,
                                        const ReconParams& params, const EncodingModel& model,
                                        const AdmmConfig& cfg, const GradientRequest& req) {
  if (batch.empty()) throw InvalidArgument("loss_and_gradients: empty batch");
  for (const TrainSlice* slice : batch) {
    if (slice->clean.n != model.n || slice->noise.n != model.n ||
        slice->reference.n != model.n0) {
      throw ShapeError("loss_and_gradients: slice does not match model");
    }
  }
  switch (params.method) {
    case ReconMethod::ZeroFilled:
    case ReconMethod::Apodized:
      return detail::linear_recon_loss(batch, w_centered, sigma, params, model, req);
    case ReconMethod::SenseTV:
      return detail::sense_tv_loss(batch, w_centered, sigma, params, model, cfg, req);
  }
  throw InvalidArgument("loss_and_gradients: unknown method");
}

}  // namespace kdesign
