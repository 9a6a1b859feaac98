#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kdesign/core.hpp"
#include "kdesign/errors.hpp"
#include "kdesign/loss.hpp"
#include "kdesign/metrics.hpp"
#include "kdesign/phantom.hpp"
#include "kdesign/recon.hpp"
#include "kdesign/rng.hpp"

namespace kdesign {

enum class DesignMode { Uniform, Nonuniform };

inline const char* design_mode_name(DesignMode m) {
  switch (m) {
    case DesignMode::Uniform: return "uniform";
    case DesignMode::Nonuniform: return "nonuniform";
  }
  throw InvalidArgument("design_mode_name: unknown mode");
}

inline DesignMode design_mode_from_name(const std::string& name) {
  if (name == "uniform") return DesignMode::Uniform;
  if (name == "nonuniform") return DesignMode::Nonuniform;
  throw InvalidArgument("unknown design mode: " + name);
}

struct Hyperparameters {
  double lr_params = 0.0;
  double decay_params = 1.0;
  double lr_weights = 0.0;
  double decay_weights = 1.0;
  int epochs = 0;
  int batch_size = 8;
  int rounding_epoch = -1;  // epoch at which w is rounded and frozen; < 0 = only at the end
  double lambda_init = -1.0;  // < 0: start from the best point of a coarse log grid
};

inline Hyperparameters default_hyperparameters(ReconMethod method, DesignMode mode) {
  Hyperparameters h;
  switch (method) {
    case ReconMethod::ZeroFilled:
      throw InvalidArgument(
          "default_hyperparameters: zero-filled has no trainable parameters; "
          "build the baseline directly");
    case ReconMethod::Apodized:
      h.lr_params = 1.0;
      h.decay_params = 0.99;
      h.epochs = 50;
      if (mode == DesignMode::Nonuniform) {
        h.lr_weights = 0.1;
        h.decay_weights = 0.99;
        h.rounding_epoch = 45;
      }
      return h;
    case ReconMethod::SenseTV:
      if (mode == DesignMode::Uniform) {
        h.lr_params = 0.01;
        h.decay_params = 0.9;
        h.epochs = 10;
      } else {
        h.lr_params = 0.001;
        h.decay_params = 0.99;
        h.lr_weights = 0.01;
        h.decay_weights = 0.99;
        h.epochs = 50;
        h.rounding_epoch = 45;
      }
      return h;
  }
  throw InvalidArgument("default_hyperparameters: unknown method");
}

struct DesignProblem {
  AcquisitionBudget budget;
  std::vector<int> candidates;
  ReconMethod method = ReconMethod::Apodized;
  DesignMode mode = DesignMode::Uniform;
  Hyperparameters hyper;
  AdmmConfig admm;
  bool select_on_validation = false;  // rank candidates on the validation split instead
};

// ---------------------------------------------------------------------------
// Budget projection and rounding
// ---------------------------------------------------------------------------

/// Euclidean projection onto { w : sum w = budget, w_m >= eps } with
/// eps = 1e-3 * (budget / n): shift everything by the common deficit
/// beta / n, clamp violators to eps, and re-project the rest until feasible.
inline AveragingPattern project_budget(std::vector<double> w, int n,
                                       const AcquisitionBudget& budget) {
  require_even_gridsize(n, budget.n0, "project_budget");
  if (static_cast<int>(w.size()) != n) {
    throw ShapeError("project_budget: expected " + std::to_string(n) + " entries");
  }
  const double target = budget.effective_budget(n);
  const double eps = 1e-3 * (target / n);
  if (eps * n >= target) {
    throw InfeasibleProjection("project_budget: floor exceeds the scan-time budget");
  }

  std::vector<bool> clamped(w.size(), false);
  int free_count = n;
  while (true) {
    double free_sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!clamped[i]) free_sum += w[i];
    }
    if (free_count == 0) {
      throw InfeasibleProjection("project_budget: no feasible point above the floor");
    }
    const double shift =
        (target - eps * static_cast<double>(n - free_count) - free_sum) / free_count;
    bool changed = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!clamped[i] && w[i] + shift < eps) {
        clamped[i] = true;
        --free_count;
        changed = true;
      }
    }
    if (!changed) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = clamped[i] ? eps : w[i] + shift;
      break;
    }
  }
  return AveragingPattern(n, std::move(w), budget);
}

/// g / ||g||_2, or zeros when the norm is negligible.
inline std::vector<double> normalize_gradient(std::vector<double> g) {
  double norm_sq = 0.0;
  for (double v : g) norm_sq += v * v;
  const double norm = std::sqrt(norm_sq);
  if (norm <= 1e-12) {
    std::fill(g.begin(), g.end(), 0.0);
    return g;
  }
  for (double& v : g) v /= norm;
  return g;
}

/// Nonnegative integer counts q minimizing ||q - target||_1 subject to
/// sum q = total: round half away from zero, then push single units in the
/// direction of the deficit, always taking the cheapest move. Ties prefer
/// lines near the k-space center when adding and far from it when removing
/// (centered index distance |m + 1/2|; the final tie-break is the index).
inline std::vector<std::int64_t> round_to_budget(const std::vector<double>& target,
                                                 std::int64_t total) {
  if (target.empty()) throw InvalidArgument("round_to_budget: empty target");
  if (total < 0) throw InvalidArgument("round_to_budget: negative budget");
  const int n = static_cast<int>(target.size());
  std::vector<std::int64_t> q(target.size());
  std::int64_t sum = 0;
  for (int i = 0; i < n; ++i) {
    q[i] = std::max<std::int64_t>(0, std::llround(target[static_cast<std::size_t>(i)]));
    sum += q[i];
  }
  auto center_distance = [n](int i) { return std::abs(i - n / 2 + 0.5); };
  while (sum != total) {
    const int direction = sum < total ? 1 : -1;
    int best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (direction < 0 && q[i] == 0) continue;
      const double t = target[static_cast<std::size_t>(i)];
      const double cost = std::abs(static_cast<double>(q[i] + direction) - t) -
                          std::abs(static_cast<double>(q[i]) - t);
      if (cost < best_cost) {
        best = i;
        best_cost = cost;
      } else if (cost == best_cost && best >= 0) {
        const double di = center_distance(i), db = center_distance(best);
        if (direction > 0 ? di < db : di > db) best = i;
      }
    }
    if (best < 0) throw InfeasibleProjection("round_to_budget: cannot meet the budget");
    q[static_cast<std::size_t>(best)] += direction;
    sum += direction;
  }
  return q;
}

/// Round an effective pattern to actual per-line averages summing exactly to
/// the TR budget.
inline IntegerAveragingPattern round_pattern(const AveragingPattern& w,
                                             const AcquisitionBudget& budget) {
  std::vector<double> actual(w.effective().size());
  for (std::size_t i = 0; i < actual.size(); ++i) {
    actual[i] = w.effective()[i] * w.n() / budget.n0;
  }
  return IntegerAveragingPattern(w.n(), round_to_budget(actual, budget.total_tr()), budget);
}

// ---------------------------------------------------------------------------
// Inner optimization (fixed gridsize)
// ---------------------------------------------------------------------------

struct TrainingResult {
  ReconParams params;
  AveragingPattern pattern;        // continuous solution before rounding
  IntegerAveragingPattern counts;  // deployable integer averages
  double final_loss = 0.0;         // vs the gridsize-n references, integer pattern
  std::vector<double> epoch_losses;
  double max_budget_violation = 0.0;  // post-projection, relative
};

namespace detail {

// Key tags so noise, shuffling, and perturbation streams never collide.
inline constexpr std::uint64_t kNoiseTag = 101;
inline constexpr std::uint64_t kShuffleTag = 102;
inline constexpr std::uint64_t kSpsaTag = 103;

struct WindowState {
  std::vector<double> h;  // kept strictly positive by the projection in step()

  explicit WindowState(int n) : h(static_cast<std::size_t>(n) * n, 1.0) {}

  const std::vector<double>& window() const { return h; }

  void step(const std::vector<double>& window_grad, double lr) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      h[i] = std::max(h[i] - lr * window_grad[i], 1e-6);
    }
  }
};

/// The TV-weight SGD rates assume the starting lambda is already within
/// about a decade of the optimum, which depends on the noise level and
/// problem scale. When no explicit start is configured, pick the best
/// half-decade point on the training split (fixed noise, so deterministic).
inline double calibrate_lambda(const std::vector<TrainSlice>& slices,
                               std::span<const double> w_centered, double sigma,
                               const EncodingModel& model, const AdmmConfig& admm) {
  static constexpr double kGrid[] = {1e-3,    3.16e-3, 1e-2, 3.16e-2, 1e-1,
                                     3.16e-1, 1.0,     3.16, 10.0};
  std::vector<const TrainSlice*> all;
  all.reserve(slices.size());
  for (const TrainSlice& s : slices) all.push_back(&s);
  double best = kGrid[0];
  double best_loss = std::numeric_limits<double>::infinity();
  for (double lambda : kGrid) {
    const double loss = sense_tv_batch_loss(all, w_centered, sigma, lambda, model, admm);
    if (loss < best_loss) {
      best_loss = loss;
      best = lambda;
    }
  }
  return best;
}

}  // namespace detail

/// Projected SGD at a fixed candidate gridsize: trains the reconstruction
/// parameters (and in Nonuniform mode the averaging pattern, which is
/// rounded to integers at hyper.rounding_epoch and frozen). The reported
/// final loss evaluates the deployable design — integer pattern, trained
/// parameters — against the gridsize-n references over the whole training
/// split.
inline TrainingResult train_inner(int n, const DesignProblem& problem, const Dataset& dataset,
                                  std::uint64_t seed) {
  if (problem.method == ReconMethod::ZeroFilled) {
    throw InvalidArgument("train_inner: zero-filled has no trainable parameters");
  }
  require_even_gridsize(n, dataset.n0, "train_inner");
  if (problem.budget.n0 != dataset.n0) {
    throw ShapeError("train_inner: budget gridsize != dataset gridsize");
  }
  const Hyperparameters& hyper = problem.hyper;
  if (hyper.epochs < 1) throw InvalidArgument("train_inner: epochs must be >= 1");
  if (hyper.batch_size < 1) throw InvalidArgument("train_inner: batch size must be >= 1");

  const auto train_ids = dataset.indices(Split::Train);
  if (train_ids.empty()) throw DegenerateInput("train_inner: empty training split");

  const EncodingModel model(dataset.maps, n);
  const double sigma = problem.budget.sigma;

  std::vector<TrainSlice> slices;
  slices.reserve(train_ids.size());
  for (std::size_t t : train_ids) {
    slices.push_back(make_train_slice(dataset.slices[t], dataset.maps, n,
                                      rng::derive(seed, detail::kNoiseTag, t)));
  }

  AveragingPattern pattern = uniform_pattern(n, problem.budget);
  std::vector<double> w = pattern.effective();
  const bool trains_w = problem.mode == DesignMode::Nonuniform;
  bool w_active = trains_w;

  detail::WindowState window(n);
  double lambda = hyper.lambda_init;
  if (problem.method == ReconMethod::SenseTV && lambda < 0.0) {
    lambda = detail::calibrate_lambda(slices, w, sigma, model, problem.admm);
  }
  auto current_params = [&]() {
    return problem.method == ReconMethod::Apodized ? ReconParams::apodized(window.window())
                                                   : ReconParams::sense_tv(lambda);
  };

  TrainingResult result{current_params(), pattern,
                        round_pattern(pattern, problem.budget), 0.0, {}, 0.0};
  std::optional<IntegerAveragingPattern> counts;
  const double target = problem.budget.effective_budget(n);

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    if (w_active && epoch == hyper.rounding_epoch) {
      result.pattern = AveragingPattern(n, w, problem.budget);
      counts = round_pattern(result.pattern, problem.budget);
      w = effective_weights(*counts, problem.budget);
      w_active = false;
    }
    const double lr_p = hyper.lr_params * std::pow(hyper.decay_params, epoch);
    const double lr_w = hyper.lr_weights * std::pow(hyper.decay_weights, epoch);

    std::vector<std::size_t> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::Stream(rng::derive(seed, detail::kShuffleTag, n, epoch)).shuffle(order);

    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), begin + hyper.batch_size);
      std::vector<const TrainSlice*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&slices[order[i]]);

      GradientRequest req;
      req.params = true;
      req.weights = w_active;
      req.spsa_key = rng::derive(seed, detail::kSpsaTag, n, epoch, steps);

      LossGradients g;
      try {
        g = loss_and_gradients(batch, w, sigma, current_params(), model, problem.admm, req);
      } catch (const NumericalFailure& e) {
        throw TrainingDiverged(epoch, e.what());
      }
      epoch_loss += g.loss;
      ++steps;

      if (problem.method == ReconMethod::Apodized) {
        window.step(g.window_grad, lr_p);
      } else {
        lambda = std::max(0.0, lambda - lr_p * g.lambda_grad);
      }
      if (w_active) {
        const std::vector<double> dir = normalize_gradient(g.w_grad);
        for (std::size_t m = 0; m < w.size(); ++m) w[m] -= lr_w * dir[m];
        AveragingPattern projected = project_budget(std::move(w), n, problem.budget);
        result.max_budget_violation = std::max(
            result.max_budget_violation, std::abs(projected.sum() - target) / target);
        w = projected.effective();
      }
    }
    result.epoch_losses.push_back(epoch_loss / steps);
  }

  if (w_active) result.pattern = AveragingPattern(n, w, problem.budget);
  if (!counts) counts = round_pattern(result.pattern, problem.budget);
  result.counts = *counts;
  result.params = current_params();

  // Final pass with the integer pattern the scanner would actually run.
  const std::vector<double> w_final = effective_weights(*counts, problem.budget);
  std::vector<const TrainSlice*> all;
  for (const TrainSlice& s : slices) all.push_back(&s);
  try {
    result.final_loss = loss_and_gradients(all, w_final, sigma, result.params, model,
                                           problem.admm, GradientRequest{})
                            .loss;
  } catch (const NumericalFailure& e) {
    throw TrainingDiverged(hyper.epochs - 1, e.what());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Outer grid search over candidate gridsizes
// ---------------------------------------------------------------------------

struct CandidateReport {
  int n = 0;
  double inner_loss = 0.0;  // vs gridsize-n references
  double outer_loss = 0.0;  // mean squared error vs full-grid references
  double outer_nrmse = 0.0;
  double outer_ssim = 0.0;
  bool diverged = false;
  double max_budget_violation = 0.0;
  std::vector<double> epoch_losses;
};

struct DesignResult {
  int n_hat = 0;
  ReconParams params;
  AveragingPattern pattern;
  IntegerAveragingPattern counts;
  std::vector<CandidateReport> table;
};

struct OuterMetrics {
  double loss = 0.0;  // mean squared error against the full-grid references
  double nrmse = 0.0;
  double ssim = 0.0;
};

/// Score a deployable design (gridsize, trained parameters, integer
/// averages) against the full-grid references of the selection split,
/// using the same per-slice fixed noise draws as training.
inline OuterMetrics evaluate_outer(const DesignProblem& problem, const Dataset& dataset,
                                   std::uint64_t seed, int n, const ReconParams& params,
                                   const IntegerAveragingPattern& counts) {
  const auto select_ids =
      dataset.indices(problem.select_on_validation ? Split::Validation : Split::Train);
  if (select_ids.empty()) throw DegenerateInput("evaluate_outer: empty selection split");

  const EncodingModel model(dataset.maps, n);
  const std::vector<double> w = effective_weights(counts, problem.budget);
  double mse_sum = 0.0;
  double error_energy = 0.0;
  double reference_energy = 0.0;
  MetricReport ssim_report;
  for (std::size_t t : select_ids) {
    const Image ref = reference_image(dataset.slices[t], dataset.maps, dataset.n0).image;
    reference_energy += norm2_sq(ref.pixels);
    const TrainSlice slice = make_train_slice(dataset.slices[t], dataset.maps, n,
                                              rng::derive(seed, detail::kNoiseTag, t));
    const MultiCoilKSpace d = noisy_data(slice, w, problem.budget.sigma);
    Image x(dataset.n0);
    switch (params.method) {
      case ReconMethod::ZeroFilled: x = zero_filled_recon(d, model); break;
      case ReconMethod::Apodized: x = apodized_recon(d, params, model); break;
      case ReconMethod::SenseTV:
        x = sense_tv_recon(d, w, params, model, problem.admm);
        break;
    }
    const double mse = mse_loss(x.pixels, ref.pixels);
    mse_sum += mse;
    error_energy += mse * static_cast<double>(x.pixels.size());
    ssim_report.add(0.0, ssim(x, ref));
  }
  if (reference_energy <= 0.0) throw DegenerateInput("evaluate_outer: zero-energy references");
  return OuterMetrics{mse_sum / static_cast<double>(select_ids.size()),
                      std::sqrt(error_energy / reference_energy), ssim_report.ssim_mean()};
}

/// Train every candidate gridsize and keep the one whose deployable design
/// best reproduces the full-grid references (same fixed noise draws as
/// training, so the outer loss is deterministic). Diverged candidates stay
/// in the table with infinite loss.
inline DesignResult grid_search(const DesignProblem& problem, const Dataset& dataset,
                                std::uint64_t seed) {
  if (problem.candidates.empty()) throw InvalidArgument("grid_search: no candidates");
  if (problem.budget.n0 != dataset.n0) {
    throw ShapeError("grid_search: budget gridsize != dataset gridsize");
  }

  std::vector<CandidateReport> table;
  std::vector<TrainingResult> trainings;
  double best = std::numeric_limits<double>::infinity();
  int best_index = -1;

  for (std::size_t c = 0; c < problem.candidates.size(); ++c) {
    const int n = problem.candidates[c];
    CandidateReport row;
    row.n = n;
    TrainingResult training{ReconParams::zero_filled(), uniform_pattern(n, problem.budget),
                            round_pattern(uniform_pattern(n, problem.budget), problem.budget),
                            0.0,
                            {},
                            0.0};
    try {
      training = train_inner(n, problem, dataset, seed);
      row.inner_loss = training.final_loss;
      row.epoch_losses = training.epoch_losses;
      row.max_budget_violation = training.max_budget_violation;

      const OuterMetrics outer =
          evaluate_outer(problem, dataset, seed, n, training.params, training.counts);
      row.outer_loss = outer.loss;
      row.outer_nrmse = outer.nrmse;
      row.outer_ssim = outer.ssim;
    } catch (const TrainingDiverged&) {
      row.diverged = true;
      row.inner_loss = std::numeric_limits<double>::infinity();
      row.outer_loss = std::numeric_limits<double>::infinity();
      row.outer_nrmse = std::numeric_limits<double>::infinity();
      row.outer_ssim = 0.0;
    }
    table.push_back(row);
    trainings.push_back(std::move(training));
    if (!row.diverged && row.outer_loss < best) {
      best = row.outer_loss;
      best_index = static_cast<int>(c);
    }
  }

  if (best_index < 0) throw NumericalFailure("grid_search: every candidate diverged");
  TrainingResult& winner = trainings[static_cast<std::size_t>(best_index)];
  return DesignResult{problem.candidates[static_cast<std::size_t>(best_index)],
                      std::move(winner.params), std::move(winner.pattern),
                      std::move(winner.counts), std::move(table)};
}

}  // namespace kdesign
