#include <gtest/gtest.h>

#include <cmath>

#include "specmuon/diagnostics.hpp"
#include "specmuon/problems.hpp"
#include "specmuon/run.hpp"
#include "specmuon/sav.hpp"
#include "specmuon/specmuon.hpp"

using namespace specmuon;

TEST(Dissipation, UnchangedModesPass) {
  const ModeState m{{1.0, 0.5}, 2};
  EXPECT_TRUE(check_mode_dissipation(m, m, std::vector<double>{0.0, 0.0}, 0.95));
}

TEST(Dissipation, InflatedEnergyFails) {
  const ModeState prev{{1.0, 0.5}, 2};
  const ModeState next{{1.0, 0.6}, 2};
  EXPECT_FALSE(check_mode_dissipation(prev, next, std::vector<double>{0.0, 0.0}, 0.95));
  // A per-mode violation is caught even when the total decreases.
  const auto c = check_mode_dissipation(std::vector<double>{1.0, 0.5}, std::vector<double>{0.5, 0.6},
                                        std::vector<double>{0.0, 0.0}, 0.95);
  EXPECT_TRUE(c.global_ok);
  EXPECT_EQ(c.modes_failed, 1u);
  EXPECT_FALSE(c.ok);
  EXPECT_THROW(check_mode_dissipation(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0},
                                      std::vector<double>{0.0}, 0.95),
               DimensionError);
}

TEST(Positivity, Cases) {
  EXPECT_TRUE(check_positivity(ModeState{{2.0, 2.0, 2.0}, 3}));
  EXPECT_FALSE(check_positivity(ModeState{{2.0, 0.0}, 2}));
}

TEST(EtaCondition, Substitution) {
  EXPECT_EQ(check_eta_condition(2.0, 1.0, 1.0, 0.0, std::nullopt), std::optional<bool>(true));
  EXPECT_EQ(check_eta_condition(2.0, 1.0, 1.0, 0.5, 4.0), std::optional<bool>(true));
  EXPECT_EQ(check_eta_condition(2.0, 1.0, 1.0, 1.0, 4.0), std::optional<bool>(true));
  EXPECT_EQ(check_eta_condition(2.0, 1.0, 1.0, 1.5, 4.0), std::optional<bool>(false));
  EXPECT_EQ(check_eta_condition(2.0, 1.0, 1.0, 0.5, std::nullopt), std::nullopt);
}

namespace {

std::vector<TrajectoryRecord> geometric(double q, std::size_t n, double f_star) {
  std::vector<TrajectoryRecord> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    t[k].iter = k;
    t[k].loss = f_star + std::pow(q, static_cast<double>(k));
    t[k].c0 = 1.0;
  }
  return t;
}

}  // namespace

TEST(EstimateRate, GeometricSequence) {
  RateInputs in;
  in.f_star = 0.25;
  in.constants = {1.0, 0.5, 0.25};
  in.tau = 1.0;
  const auto est = estimate_rate(geometric(0.9, 50, 0.25), in);
  EXPECT_NEAR(est.fitted_contraction, 0.9, 1e-6);
  EXPECT_EQ(est.window_begin, 0u);
  EXPECT_EQ(est.window_end, 50u);
}

TEST(EstimateRate, DegenerateAndShortWindows) {
  RateInputs in;
  in.constants = {1.0, 1.0, 0.0};
  in.tau = 1.0;
  auto flat = geometric(0.9, 50, 0.0);
  for (auto& r : flat) r.loss = 0.0;
  EXPECT_THROW(estimate_rate(flat, in), EstimationError);
  EXPECT_THROW(estimate_rate(geometric(0.9, 19, 0.0), in), EstimationError);
  in.constants.mu.reset();
  EXPECT_THROW(estimate_rate(geometric(0.9, 50, 0.0), in), EstimationError);
}

TEST(EstimateRate, PrintedRateExceedsOneWithUnitShift) {
  // Perfect alignment, optimal step, mu = L and kappa = 1: the printed rate
  // 2 tau (2 - tau) sqrt(f* + kappa) c0 mu / L evaluates to 2, so the bound
  // 1 - rho is negative and no contraction can satisfy it. The bound is
  // only meaningful when 2 sqrt(f* + kappa) <= 1.
  RateInputs in;
  in.constants = {1.0, 1.0, 0.0};
  in.kappa = 1.0;
  in.tau = 1.0;
  const auto est = estimate_rate(geometric(0.5, 40, 0.0), in);
  EXPECT_NEAR(est.theoretical_rho, 2.0, 1e-12);
  EXPECT_FALSE(est.bound_holds);
  in.kappa = 0.01;
  EXPECT_NEAR(estimate_rate(geometric(0.5, 40, 0.0), in).theoretical_rho, 0.2, 1e-12);
}

TEST(TheoryTrajectory, LeastSquaresThousandStepsDissipates) {
  const LeastSquaresProblem p(LeastSquaresSpec{});
  SpecMuonOptimizer opt(SpecMuonConfig::theory(0.02, 4));
  const auto r = run_optimizer(p, opt, RunOptions::steps(1000));
  ASSERT_FALSE(r.diverged) << r.error;
  EXPECT_EQ(r.records.size(), 1000u);
  EXPECT_EQ(r.ledger.dissipation.checked, 1000u);
  EXPECT_EQ(r.ledger.dissipation.failed, 0u);
  EXPECT_EQ(r.ledger.positivity.failed, 0u);
  for (const auto& rec : r.records) {
    EXPECT_LE(rec.dissipation_lhs, rec.dissipation_rhs + kTheoremSlack);
    EXPECT_GT(rec.min_r, 0.0);
  }
  EXPECT_LT(r.final_loss, r.records.front().loss);
}

TEST(TheoryTrajectory, DescentWheneverEtaConditionHolds) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const QuadraticProblem p({50, 1e-2, 1.0, 10, seed});
    SpecMuonOptimizer opt(SpecMuonConfig::theory(0.05, 2));
    const auto r = run_optimizer(p, opt, RunOptions::steps(300));
    ASSERT_FALSE(r.diverged);
    EXPECT_GT(r.ledger.descent.checked, 0u);
    EXPECT_EQ(r.ledger.descent.failed, 0u);
  }
}

TEST(TheoryTrajectory, IsotropicRateWithinBound) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const QuadraticProblem p({50, 1.0, 1.0, 10, seed});
    SpecMuonOptimizer opt(SpecMuonConfig::theory(0.1, 5));
    const auto r = run_optimizer(p, opt, RunOptions::steps(300));
    RateInputs in;
    in.constants = p.constants();
    in.kappa = 1.0;
    const auto est = estimate_rate(r.records, in);
    for (double c : est.c0_series) {
      EXPECT_GE(c, 0.0);
      EXPECT_LE(c, 1.0 + 1e-12);
    }
    EXPECT_GT(est.tau, 0.0);
    EXPECT_LE(est.tau, 2.0);
    EXPECT_TRUE(est.bound_holds) << est.fitted_contraction << " vs " << 1.0 - est.theoretical_rho;
  }
}

TEST(Ledger, ScalarRsavAudited) {
  const LeastSquaresProblem p(LeastSquaresSpec{});
  SavOptimizer opt({0.5, 1.0, 0.95, true});
  const auto r = run_optimizer(p, opt, RunOptions::steps(200));
  EXPECT_EQ(r.ledger.dissipation.checked, 200u);
  EXPECT_EQ(r.ledger.failures(), 0u);
  EXPECT_EQ(r.evaluations, 200u * 2 + 1);  // plus the final loss
}

TEST(Ledger, PracticalModeRecordedButNotAudited) {
  const LeastSquaresProblem p(LeastSquaresSpec{});
  SpecMuonOptimizer opt(SpecMuonConfig::practical(0.01, 2));
  const auto r = run_optimizer(p, opt, RunOptions::steps(50));
  EXPECT_EQ(r.ledger.dissipation.checked, 0u);
  EXPECT_TRUE(std::isnan(r.records[0].dissipation_rhs));
  EXPECT_FALSE(std::isnan(r.records[0].modified_energy));
}
