#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kdesign/loss.hpp"
#include "kdesign/phantom.hpp"

using namespace kdesign;

namespace {

struct Fixture {
  SensitivityMaps maps;
  std::vector<MultiCoilKSpace> full;  // full-grid clean k-space per slice
  std::vector<TrainSlice> slices;     // prepared at gridsize n
  int n0, n;

  Fixture(int n0_, int n_, int coils, int count, std::uint64_t seed) : n0(n0_), n(n_) {
    maps = generate_sensitivities(coils, n0, rng::derive(seed, 1));
    for (int t = 0; t < count; ++t) {
      Image img = generate_phantom(n0, 3, rng::derive(seed, 2, t));
      MultiCoilKSpace ks = normalize_slice(image_to_kspace(img, maps));
      full.push_back(ks);
      slices.push_back(make_train_slice(ks, maps, n, rng::derive(seed, 3, t)));
    }
  }

  std::vector<const TrainSlice*> batch() const {
    std::vector<const TrainSlice*> b;
    for (const auto& s : slices) b.push_back(&s);
    return b;
  }
  EncodingModel model() const { return EncodingModel(maps, n); }
};

std::vector<double> ramp_pattern(int n, double lo, double hi) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) {
    w[static_cast<std::size_t>(m)] = lo + (hi - lo) * m / std::max(1, n - 1);
  }
  return w;
}

double rel_l2_error(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num) / std::sqrt(std::max(den, 1e-300));
}

}  // namespace

TEST(NoisyData, ScalesNoiseByInverseSqrtWeight) {
  Fixture f(16, 8, 2, 1, 11);
  const auto w = ramp_pattern(8, 1.0, 4.0);
  const double sigma = 0.3;
  const MultiCoilKSpace d = noisy_data(f.slices[0], w, sigma);
  for (int l = 0; l < d.coils; ++l) {
    for (int r = 0; r < 8; ++r) {
      const double wm = w[static_cast<std::size_t>(fft_to_centered(r, 8) + 4)];
      for (int c = 0; c < 8; ++c) {
        const cxd want = f.slices[0].clean.at(l, r, c) +
                         sigma / std::sqrt(wm) * f.slices[0].noise.at(l, r, c);
        EXPECT_NEAR(std::abs(d.at(l, r, c) - want), 0.0, 1e-15);
      }
    }
  }
}

TEST(NoisyData, ZeroWeightLineIsNotAcquired) {
  Fixture f(16, 8, 2, 1, 12);
  std::vector<double> w(8, 2.0);
  w[1] = 0.0;  // centered index -3
  const MultiCoilKSpace d = noisy_data(f.slices[0], w, 0.4);
  const int row = centered_to_fft(-3, 8);
  for (int l = 0; l < d.coils; ++l) {
    for (int c = 0; c < 8; ++c) EXPECT_EQ(d.at(l, row, c), cxd(0.0, 0.0));
  }
  // Sigma = 0 with a zero line still blanks it: unmeasured, not noiseless.
  const MultiCoilKSpace d0 = noisy_data(f.slices[0], w, 0.0);
  for (int c = 0; c < 8; ++c) EXPECT_EQ(d0.at(0, row, c), cxd(0.0, 0.0));
}

TEST(LossAndGradients, NoiselessFullGridIdentityWindowHasZeroLoss) {
  Fixture f(16, 16, 3, 2, 13);
  const auto w = ramp_pattern(16, 1.0, 1.0);
  GradientRequest req;
  req.params = true;
  const auto b = f.batch();
  const LossGradients g = loss_and_gradients(b, w, 0.0, ReconParams::apodized_flat(16),
                                             f.model(), AdmmConfig{}, req);
  EXPECT_NEAR(g.loss, 0.0, 1e-18);
  for (double v : g.window_grad) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LossAndGradients, PureNoiseLossScalesWithSigmaSquared) {
  Fixture f(16, 8, 2, 1, 14);
  // Zero out the signal so the loss is noise-only.
  TrainSlice s = f.slices[0];
  std::fill(s.clean.samples.begin(), s.clean.samples.end(), cxd{0.0, 0.0});
  std::fill(s.reference.pixels.begin(), s.reference.pixels.end(), cxd{0.0, 0.0});
  const std::vector<const TrainSlice*> b{&s};
  const auto w = ramp_pattern(8, 1.0, 3.0);
  const EncodingModel model = f.model();
  const double l1 = loss_and_gradients(b, w, 0.2, ReconParams::zero_filled(), model,
                                       AdmmConfig{}, GradientRequest{})
                        .loss;
  const double l2 = loss_and_gradients(b, w, 0.4, ReconParams::zero_filled(), model,
                                       AdmmConfig{}, GradientRequest{})
                        .loss;
  EXPECT_NEAR(l2 / l1, 4.0, 1e-9);
}

TEST(LossAndGradients, BatchLossIsMeanOfSliceLosses) {
  Fixture f(16, 8, 2, 3, 15);
  const auto w = ramp_pattern(8, 1.0, 2.0);
  const EncodingModel model = f.model();
  const auto b = f.batch();
  const double batch_loss = loss_and_gradients(b, w, 0.1, ReconParams::zero_filled(), model,
                                               AdmmConfig{}, GradientRequest{})
                                .loss;
  double acc = 0.0;
  for (const TrainSlice* s : b) {
    const std::vector<const TrainSlice*> one{s};
    acc += loss_and_gradients(one, w, 0.1, ReconParams::zero_filled(), model, AdmmConfig{},
                              GradientRequest{})
               .loss;
  }
  EXPECT_NEAR(batch_loss, acc / 3.0, 1e-12);
}

// The loss is quadratic in the window (the reconstruction is linear in h),
// so central differences are exact up to roundoff; a tight tolerance is a
// genuine check of the analytic expression.
TEST(LossAndGradients, ApodizedWindowGradientMatchesCentralDifferences) {
  for (std::uint64_t inst = 0; inst < 3; ++inst) {
    Fixture f(16, 16, 2, 2, 100 + inst);
    rng::Stream s(rng::derive(777, inst));
    std::vector<double> window(16 * 16);
    for (double& h : window) h = s.next_in(0.3, 1.5);
    std::vector<double> w(16);
    for (double& v : w) v = s.next_in(0.5, 4.0);
    const double sigma = 0.15;
    const EncodingModel model = f.model();
    const auto b = f.batch();

    GradientRequest req;
    req.params = true;
    const LossGradients g = loss_and_gradients(b, w, sigma, ReconParams::apodized(window), model,
                                               AdmmConfig{}, req);

    std::vector<double> fd(window.size());
    for (std::size_t k = 0; k < window.size(); ++k) {
      const double step = 1e-4 * std::max(1.0, std::abs(window[k]));
      std::vector<double> hp = window, hm = window;
      hp[k] += step;
      hm[k] -= step;
      const double lp = loss_and_gradients(b, w, sigma, ReconParams::apodized(hp), model,
                                           AdmmConfig{}, GradientRequest{})
                            .loss;
      const double lm = loss_and_gradients(b, w, sigma, ReconParams::apodized(hm), model,
                                           AdmmConfig{}, GradientRequest{})
                            .loss;
      fd[k] = (lp - lm) / (2.0 * step);
    }
    EXPECT_LE(rel_l2_error(g.window_grad, fd), 1e-6) << "instance " << inst;
  }
}

TEST(LossAndGradients, PatternGradientMatchesCentralDifferences) {
  for (ReconMethod method : {ReconMethod::ZeroFilled, ReconMethod::Apodized}) {
    Fixture f(16, 8, 2, 2, 300 + static_cast<int>(method));
    rng::Stream s(rng::derive(888, static_cast<int>(method)));
    std::vector<double> window(8 * 8);
    for (double& h : window) h = s.next_in(0.5, 1.2);
    const ReconParams params = method == ReconMethod::Apodized ? ReconParams::apodized(window)
                                                               : ReconParams::zero_filled();
    std::vector<double> w(8);
    for (double& v : w) v = s.next_in(1.0, 5.0);
    const double sigma = 0.2;
    const EncodingModel model = f.model();
    const auto b = f.batch();

    GradientRequest req;
    req.weights = true;
    const LossGradients g = loss_and_gradients(b, w, sigma, params, model, AdmmConfig{}, req);
    ASSERT_EQ(g.w_grad.size(), w.size());

    std::vector<double> fd(w.size());
    for (std::size_t m = 0; m < w.size(); ++m) {
      const double step = 1e-6 * w[m];
      std::vector<double> wp = w, wm = w;
      wp[m] += step;
      wm[m] -= step;
      const double lp =
          loss_and_gradients(b, wp, sigma, params, model, AdmmConfig{}, GradientRequest{}).loss;
      const double lm =
          loss_and_gradients(b, wm, sigma, params, model, AdmmConfig{}, GradientRequest{}).loss;
      fd[m] = (lp - lm) / (2.0 * step);
    }
    EXPECT_LE(rel_l2_error(g.w_grad, fd), 1e-5) << recon_method_name(method);
  }
}

TEST(LossAndGradients, SenseTvLambdaGradientMatchesRecomputedSecant) {
  Fixture f(16, 8, 2, 2, 19);
  const auto w = ramp_pattern(8, 1.0, 3.0);
  const double sigma = 0.1, lambda = 0.02;
  const EncodingModel model = f.model();
  const AdmmConfig cfg;
  const auto b = f.batch();

  GradientRequest req;
  req.params = true;
  const LossGradients g =
      loss_and_gradients(b, w, sigma, ReconParams::sense_tv(lambda), model, cfg, req);

  // Recompute the two evaluations the estimator is defined by.
  const double step = 1e-3 * std::max(lambda, 1e-3);
  auto eval = [&](double lam) {
    double acc = 0.0;
    for (const TrainSlice* s : b) {
      const MultiCoilKSpace d = noisy_data(*s, w, sigma);
      const Image x = sense_tv_recon(d, w, ReconParams::sense_tv(lam), model, cfg);
      acc += mse_loss(x.pixels, s->reference.pixels);
    }
    return acc / static_cast<double>(b.size());
  };
  const double hi = eval(lambda + step), lo = eval(lambda - step);
  EXPECT_NEAR(g.lambda_grad, (hi - lo) / (2.0 * step), 1e-10);
  EXPECT_NEAR(g.loss, 0.5 * (hi + lo), 1e-12);
}

TEST(LossAndGradients, SenseTvSpsaIsDeterministicInKey) {
  Fixture f(16, 8, 2, 1, 20);
  const auto w = ramp_pattern(8, 2.0, 4.0);
  const EncodingModel model = f.model();
  const auto b = f.batch();
  GradientRequest req;
  req.weights = true;
  req.spsa_key = 42;
  const LossGradients a =
      loss_and_gradients(b, w, 0.15, ReconParams::sense_tv(0.01), model, AdmmConfig{}, req);
  const LossGradients a2 =
      loss_and_gradients(b, w, 0.15, ReconParams::sense_tv(0.01), model, AdmmConfig{}, req);
  ASSERT_EQ(a.w_grad.size(), a2.w_grad.size());
  for (std::size_t m = 0; m < a.w_grad.size(); ++m) EXPECT_EQ(a.w_grad[m], a2.w_grad[m]);

  req.spsa_key = 43;
  const LossGradients c =
      loss_and_gradients(b, w, 0.15, ReconParams::sense_tv(0.01), model, AdmmConfig{}, req);
  bool any_diff = false;
  for (std::size_t m = 0; m < a.w_grad.size(); ++m) any_diff |= a.w_grad[m] != c.w_grad[m];
  EXPECT_TRUE(any_diff);
}

TEST(LossAndGradients, SenseTvSpsaMatchesRecomputedPerturbations) {
  Fixture f(16, 8, 2, 1, 21);
  const auto w = ramp_pattern(8, 2.0, 4.0);
  const double sigma = 0.1, lambda = 0.015;
  const EncodingModel model = f.model();
  const AdmmConfig cfg;
  const auto b = f.batch();
  GradientRequest req;
  req.weights = true;
  req.spsa_key = 99;
  const LossGradients g =
      loss_and_gradients(b, w, sigma, ReconParams::sense_tv(lambda), model, cfg, req);

  double mean_w = 0.0;
  for (double v : w) mean_w += v;
  mean_w /= static_cast<double>(w.size());
  rng::Stream s(req.spsa_key);
  std::vector<double> plus(w.size()), minus(w.size());
  for (std::size_t m = 0; m < w.size(); ++m) {
    const double sign = s.next_sign();
    plus[m] = std::max(w[m] + 1e-2 * mean_w * sign, 1e-4 * mean_w);
    minus[m] = std::max(w[m] - 1e-2 * mean_w * sign, 1e-4 * mean_w);
  }
  auto eval = [&](const std::vector<double>& wv) {
    double acc = 0.0;
    for (const TrainSlice* sl : b) {
      const MultiCoilKSpace d = noisy_data(*sl, wv, sigma);
      acc += mse_loss(sense_tv_recon(d, wv, ReconParams::sense_tv(lambda), model, cfg).pixels,
                      sl->reference.pixels);
    }
    return acc / static_cast<double>(b.size());
  };
  const double lp = eval(plus), lm = eval(minus);
  for (std::size_t m = 0; m < w.size(); ++m) {
    EXPECT_NEAR(g.w_grad[m], (lp - lm) / (plus[m] - minus[m]), 1e-10);
  }
}

TEST(LossAndGradients, RejectsMismatchedSlicesAndEmptyBatches) {
  Fixture f(16, 8, 2, 1, 22);
  const auto w = ramp_pattern(8, 1.0, 2.0);
  const EncodingModel model = f.model();
  const std::vector<const TrainSlice*> empty;
  EXPECT_THROW(loss_and_gradients(empty, w, 0.1, ReconParams::zero_filled(), model, AdmmConfig{},
                                  GradientRequest{}),
               InvalidArgument);

  Fixture wrong(16, 16, 2, 1, 23);  // slice prepared at n = 16, model expects 8
  const auto b = wrong.batch();
  EXPECT_THROW(loss_and_gradients(b, w, 0.1, ReconParams::zero_filled(), model, AdmmConfig{},
                                  GradientRequest{}),
               ShapeError);
}
