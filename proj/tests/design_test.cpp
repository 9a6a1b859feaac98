#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "kdesign/design.hpp"
#include "oracles.hpp"

using namespace kdesign;

namespace {

Dataset tiny_dataset(int n0, int coils, int t_train, int t_val, int t_test,
                     std::uint64_t seed) {
  return generate_dataset(n0, coils, t_train, t_val, t_test, 3, seed);
}

/// Exact Euclidean projection onto { sum w = target, w >= eps } by
/// enumerating every active set: for each candidate clamp set C, the free
/// entries share one shift; the KKT point is the feasible candidate closest
/// to w.
std::vector<double> projection_oracle(const std::vector<double>& w, double target, double eps) {
  const int n = static_cast<int>(w.size());
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<double> best;
  for (int mask = 0; mask < (1 << n); ++mask) {
    int free_count = 0;
    double free_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(mask & (1 << i))) {
        ++free_count;
        free_sum += w[static_cast<std::size_t>(i)];
      }
    }
    if (free_count == 0) continue;
    const double shift = (target - eps * (n - free_count) - free_sum) / free_count;
    std::vector<double> x(w.size());
    bool feasible = true;
    double dist = 0.0;
    for (int i = 0; i < n; ++i) {
      const bool clamp = mask & (1 << i);
      x[static_cast<std::size_t>(i)] = clamp ? eps : w[static_cast<std::size_t>(i)] + shift;
      if (!clamp && x[static_cast<std::size_t>(i)] < eps - 1e-12) feasible = false;
      const double dv = x[static_cast<std::size_t>(i)] - w[static_cast<std::size_t>(i)];
      dist += dv * dv;
    }
    if (feasible && dist < best_dist) {
      best_dist = dist;
      best = x;
    }
  }
  return best;
}

}  // namespace

TEST(ProjectBudget, UnclampedCaseIsAPureShift) {
  const AcquisitionBudget budget(4, 4, 0.0);  // effective budget at n=4: 4*16/4 = 16
  const std::vector<double> w{1.0, 2.0, 3.0, 4.0};
  const AveragingPattern p = project_budget(w, 4, budget);
  const double shift = (16.0 - 10.0) / 4.0;
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(p.effective()[static_cast<std::size_t>(i)],
                     w[static_cast<std::size_t>(i)] + shift);
  }
  EXPECT_NEAR(p.sum(), 16.0, 1e-9 * 16.0);
}

TEST(ProjectBudget, ClampsViolatorsToTheFloor) {
  const AcquisitionBudget budget(4, 4, 0.0);
  const double target = budget.effective_budget(4);
  const double eps = 1e-3 * target / 4.0;
  const std::vector<double> w{-50.0, 5.0, 6.0, 7.0};
  const AveragingPattern p = project_budget(w, 4, budget);
  EXPECT_DOUBLE_EQ(p.effective()[0], eps);
  // The other three share one shift.
  const double s1 = p.effective()[1] - 5.0;
  EXPECT_NEAR(p.effective()[2] - 6.0, s1, 1e-12);
  EXPECT_NEAR(p.effective()[3] - 7.0, s1, 1e-12);
  EXPECT_NEAR(p.sum(), target, 1e-9 * target);
}

TEST(ProjectBudget, MatchesActiveSetEnumeration) {
  const AcquisitionBudget budget(8, 2, 0.0);  // target at n=8: 2*64/8 = 16
  const double target = budget.effective_budget(8);
  const double eps = 1e-3 * target / 8.0;
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    rng::Stream s(rng::derive(4242, inst));
    std::vector<double> w(8);
    for (double& v : w) v = s.next_in(-6.0, 6.0);  // negatives force clamping
    const AveragingPattern got = project_budget(w, 8, budget);
    const std::vector<double> want = projection_oracle(w, target, eps);
    ASSERT_EQ(want.size(), 8u) << "oracle found no feasible point";
    for (int i = 0; i < 8; ++i) {
      EXPECT_NEAR(got.effective()[static_cast<std::size_t>(i)],
                  want[static_cast<std::size_t>(i)], 1e-9)
          << "instance " << inst << " entry " << i;
    }
  }
}

TEST(ProjectBudget, IsIdempotent) {
  const AcquisitionBudget budget(8, 2, 0.0);
  rng::Stream s(7);
  std::vector<double> w(8);
  for (double& v : w) v = s.next_in(-3.0, 5.0);
  const AveragingPattern once = project_budget(w, 8, budget);
  const AveragingPattern twice = project_budget(once.effective(), 8, budget);
  for (int i = 0; i < 8; ++i) {
    EXPECT_NEAR(once.effective()[static_cast<std::size_t>(i)],
                twice.effective()[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(ProjectBudget, RejectsWrongLength) {
  const AcquisitionBudget budget(8, 2, 0.0);
  EXPECT_THROW(project_budget(std::vector<double>(5, 1.0), 8, budget), ShapeError);
}

TEST(NormalizeGradient, UnitNormAndZeroHandling) {
  const std::vector<double> g = normalize_gradient({3.0, 4.0});
  EXPECT_DOUBLE_EQ(g[0], 0.6);
  EXPECT_DOUBLE_EQ(g[1], 0.8);
  const std::vector<double> z = normalize_gradient({1e-13, -1e-13});
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(RoundToBudget, MatchesExhaustiveEnumeration) {
  for (std::uint64_t inst = 0; inst < 200; ++inst) {
    rng::Stream s(rng::derive(99, inst));
    const int n = 2 * static_cast<int>(1 + s.next_below(3));  // 2, 4, 6
    const std::int64_t total = static_cast<std::int64_t>(s.next_below(13));
    std::vector<double> target(static_cast<std::size_t>(n));
    for (double& t : target) t = s.next_in(0.0, 4.0);

    const std::vector<std::int64_t> q = round_to_budget(target, total);
    std::int64_t sum = 0;
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      ASSERT_GE(q[static_cast<std::size_t>(i)], 0);
      sum += q[static_cast<std::size_t>(i)];
      cost += std::abs(static_cast<double>(q[static_cast<std::size_t>(i)]) -
                       target[static_cast<std::size_t>(i)]);
    }
    EXPECT_EQ(sum, total);
    EXPECT_NEAR(cost, oracle::best_integer_l1_cost(target, total), 1e-9)
        << "instance " << inst;
  }
}

TEST(RoundToBudget, IntegerInputWithMatchingSumIsUnchanged) {
  const std::vector<double> target{2.0, 5.0, 0.0, 1.0};
  const std::vector<std::int64_t> q = round_to_budget(target, 8);
  EXPECT_EQ(q, (std::vector<std::int64_t>{2, 5, 0, 1}));
}

TEST(RoundToBudget, SurplusLeavesOuterLinesOnTies) {
  // llround(1.5) = 2 everywhere (half away from zero), so one unit must go;
  // all removal costs tie and the cut lands on an outermost line
  // (n = 4: centered indices -2,-1,0,1 have distances 1.5, .5, .5, 1.5).
  const std::vector<double> target{1.5, 1.5, 1.5, 1.5};
  const std::vector<std::int64_t> q = round_to_budget(target, 7);
  EXPECT_EQ(q, (std::vector<std::int64_t>{1, 2, 2, 2}));
}

TEST(RoundToBudget, DeficitGoesToCentralLinesOnTies) {
  const std::vector<double> target{1.5, 1.5, 1.5, 1.5};
  // Rounds to 2 each (sum 8); raising to 9 costs 0.5 everywhere, so the
  // extra unit goes to the most central line (first of the two at distance .5).
  const std::vector<std::int64_t> q = round_to_budget(target, 9);
  EXPECT_EQ(q, (std::vector<std::int64_t>{2, 3, 2, 2}));
}

TEST(RoundPattern, UniformPatternRoundsToUniformCounts) {
  const AcquisitionBudget budget(8, 2, 0.0);
  const IntegerAveragingPattern q = round_pattern(uniform_pattern(4, budget), budget);
  // actual = effective * n/n0 = (2*64/16) * 4/8 = 4 per line
  EXPECT_EQ(q.counts(), (std::vector<std::int64_t>{4, 4, 4, 4}));
  EXPECT_EQ(q.sum(), budget.total_tr());
}

TEST(DefaultHyperparameters, MatchesTrainingTable) {
  const Hyperparameters a = default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform);
  EXPECT_DOUBLE_EQ(a.lr_params, 1.0);
  EXPECT_DOUBLE_EQ(a.decay_params, 0.99);
  EXPECT_EQ(a.epochs, 50);
  EXPECT_EQ(a.batch_size, 8);
  EXPECT_LT(a.rounding_epoch, 0);

  const Hyperparameters an =
      default_hyperparameters(ReconMethod::Apodized, DesignMode::Nonuniform);
  EXPECT_DOUBLE_EQ(an.lr_weights, 0.1);
  EXPECT_EQ(an.rounding_epoch, 45);

  const Hyperparameters su = default_hyperparameters(ReconMethod::SenseTV, DesignMode::Uniform);
  EXPECT_DOUBLE_EQ(su.lr_params, 0.01);
  EXPECT_DOUBLE_EQ(su.decay_params, 0.9);
  EXPECT_EQ(su.epochs, 10);

  const Hyperparameters sn =
      default_hyperparameters(ReconMethod::SenseTV, DesignMode::Nonuniform);
  EXPECT_DOUBLE_EQ(sn.lr_params, 0.001);
  EXPECT_DOUBLE_EQ(sn.lr_weights, 0.01);
  EXPECT_EQ(sn.epochs, 50);
  EXPECT_EQ(sn.rounding_epoch, 45);

  EXPECT_THROW(default_hyperparameters(ReconMethod::ZeroFilled, DesignMode::Uniform),
               InvalidArgument);
}

TEST(TrainInner, UniformModeNeverTouchesThePattern) {
  const Dataset ds = tiny_dataset(16, 2, 3, 1, 1, 31);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.05), {8},
                        ReconMethod::Apodized,          DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 4;
  const TrainingResult r = train_inner(8, problem, ds, 5);
  const AveragingPattern uniform = uniform_pattern(8, problem.budget);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(r.pattern.effective()[static_cast<std::size_t>(i)],
              uniform.effective()[static_cast<std::size_t>(i)]);
  }
  EXPECT_EQ(r.max_budget_violation, 0.0);
  EXPECT_EQ(r.counts.sum(), problem.budget.total_tr());
}

TEST(TrainInner, NoiselessFullGridApodizedLossStaysZero) {
  const Dataset ds = tiny_dataset(16, 2, 3, 1, 1, 33);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.0), {16},
                        ReconMethod::Apodized,         DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 3;
  const TrainingResult r = train_inner(16, problem, ds, 6);
  EXPECT_LE(r.final_loss, 1e-8);
  for (double l : r.epoch_losses) EXPECT_LE(l, 1e-8);
  // Zero gradient everywhere: the window never moves off its initial value.
  for (double h : r.params.window) EXPECT_DOUBLE_EQ(h, 1.0);
}

TEST(TrainInner, NonuniformRoundsAndFreezesAtTheConfiguredEpoch) {
  const Dataset ds = tiny_dataset(16, 2, 4, 1, 1, 35);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.3), {8},
                        ReconMethod::Apodized,         DesignMode::Nonuniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Nonuniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 6;
  problem.hyper.rounding_epoch = 4;
  const TrainingResult r = train_inner(8, problem, ds, 7);
  EXPECT_EQ(r.counts.sum(), problem.budget.total_tr());
  EXPECT_LE(r.max_budget_violation, 1e-9);
  for (double w : r.pattern.effective()) EXPECT_GT(w, 0.0);
  // The integer pattern must round the reported continuous one.
  const IntegerAveragingPattern again = round_pattern(r.pattern, problem.budget);
  EXPECT_EQ(again.counts(), r.counts.counts());
  // With noise this high the trained pattern should differ from uniform.
  const AveragingPattern uniform = uniform_pattern(8, problem.budget);
  bool moved = false;
  for (int i = 0; i < 8; ++i) {
    moved |= std::abs(r.pattern.effective()[static_cast<std::size_t>(i)] -
                      uniform.effective()[static_cast<std::size_t>(i)]) > 1e-12;
  }
  EXPECT_TRUE(moved);
}

TEST(TrainInner, DeterministicGivenSeed) {
  const Dataset ds = tiny_dataset(16, 2, 3, 1, 1, 37);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.2), {8},
                        ReconMethod::Apodized,         DesignMode::Nonuniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Nonuniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 4;
  problem.hyper.rounding_epoch = 3;
  const TrainingResult a = train_inner(8, problem, ds, 11);
  const TrainingResult b = train_inner(8, problem, ds, 11);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(a.pattern.effective(), b.pattern.effective());
  EXPECT_EQ(a.counts.counts(), b.counts.counts());
  EXPECT_EQ(a.params.window, b.params.window);

  const TrainingResult c = train_inner(8, problem, ds, 12);
  EXPECT_NE(a.epoch_losses, c.epoch_losses);
}

TEST(TrainInner, RejectsZeroFilledAndBadShapes) {
  const Dataset ds = tiny_dataset(16, 2, 2, 1, 1, 39);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.1), {8},
                        ReconMethod::ZeroFilled,       DesignMode::Uniform,
                        Hyperparameters{},             AdmmConfig{}};
  problem.hyper.epochs = 1;
  EXPECT_THROW(train_inner(8, problem, ds, 1), InvalidArgument);

  DesignProblem mismatched{AcquisitionBudget(32, 2, 0.1), {8},
                           ReconMethod::Apodized,         DesignMode::Uniform,
                           default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                           AdmmConfig{}};
  EXPECT_THROW(train_inner(8, mismatched, ds, 1), ShapeError);
}

TEST(GridSearch, NoiselessApodizedSelectsTheFullGrid) {
  const Dataset ds = tiny_dataset(16, 2, 3, 1, 1, 41);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.0), {8, 12, 16},
                        ReconMethod::Apodized,         DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 2;
  const DesignResult r = grid_search(problem, ds, 21);
  EXPECT_EQ(r.n_hat, 16);
  ASSERT_EQ(r.table.size(), 3u);
  EXPECT_LE(r.table[2].outer_nrmse, 1e-10);
  EXPECT_NEAR(r.table[2].outer_ssim, 1.0, 1e-9);
  // Lower resolutions lose real detail in the noiseless case.
  EXPECT_GT(r.table[0].outer_loss, r.table[2].outer_loss);
  EXPECT_GT(r.table[1].outer_loss, r.table[2].outer_loss);
}

TEST(GridSearch, SelectedRowAttainsTheMinimumOuterLoss) {
  const Dataset ds = tiny_dataset(16, 2, 3, 1, 1, 43);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.4), {8, 12, 16},
                        ReconMethod::Apodized,         DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 3;
  const DesignResult r = grid_search(problem, ds, 23);
  double best = std::numeric_limits<double>::infinity();
  int best_n = 0;
  for (const CandidateReport& row : r.table) {
    EXPECT_TRUE(std::isfinite(row.outer_loss));
    EXPECT_GT(row.outer_nrmse, 0.0);
    if (row.outer_loss < best) {
      best = row.outer_loss;
      best_n = row.n;
    }
  }
  EXPECT_EQ(r.n_hat, best_n);
  EXPECT_EQ(r.counts.n(), r.n_hat);
  EXPECT_EQ(r.counts.sum(), problem.budget.total_tr());
}

TEST(GridSearch, SenseTvRunsAndIsDeterministic) {
  const Dataset ds = tiny_dataset(16, 2, 2, 1, 1, 45);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.3), {8, 16},
                        ReconMethod::SenseTV,          DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::SenseTV, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 2;
  const DesignResult a = grid_search(problem, ds, 31);
  const DesignResult b = grid_search(problem, ds, 31);
  ASSERT_EQ(a.table.size(), 2u);
  EXPECT_EQ(a.n_hat, b.n_hat);
  for (std::size_t i = 0; i < a.table.size(); ++i) {
    EXPECT_EQ(a.table[i].outer_loss, b.table[i].outer_loss);
    EXPECT_EQ(a.table[i].inner_loss, b.table[i].inner_loss);
    EXPECT_EQ(a.table[i].epoch_losses, b.table[i].epoch_losses);
  }
  EXPECT_GE(a.params.lambda, 0.0);
}

TEST(GridSearch, ValidationSelectionUsesTheValidationSplit) {
  const Dataset ds = tiny_dataset(16, 2, 3, 2, 1, 47);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.3), {8, 16},
                        ReconMethod::Apodized,         DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  problem.hyper.epochs = 2;
  const DesignResult train_sel = grid_search(problem, ds, 51);
  problem.select_on_validation = true;
  const DesignResult val_sel = grid_search(problem, ds, 51);
  // Same training, different ranking data: outer losses must differ.
  ASSERT_EQ(train_sel.table.size(), val_sel.table.size());
  for (std::size_t i = 0; i < train_sel.table.size(); ++i) {
    EXPECT_EQ(train_sel.table[i].inner_loss, val_sel.table[i].inner_loss);
    EXPECT_NE(train_sel.table[i].outer_loss, val_sel.table[i].outer_loss);
  }
}

TEST(GridSearch, RejectsEmptyCandidates) {
  const Dataset ds = tiny_dataset(16, 2, 2, 1, 1, 49);
  DesignProblem problem{AcquisitionBudget(16, 2, 0.1), {},
                        ReconMethod::Apodized,         DesignMode::Uniform,
                        default_hyperparameters(ReconMethod::Apodized, DesignMode::Uniform),
                        AdmmConfig{}};
  EXPECT_THROW(grid_search(problem, ds, 1), InvalidArgument);
}
