#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "plasticity/dynamics.hpp"
#include "plasticity/random.hpp"
#include "plasticity/simulation.hpp"

using namespace plasticity;

namespace {

const ModelParams kRef(0.9, 0.2, 0.6, 0.5);

ModelParams random_params(Rng& rng, double rate_lo = 0.05, double rate_hi = std::numbers::ln2) {
  return {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, rate_lo, rate_hi),
          uniform(rng, rate_lo, rate_hi)};
}

}  // namespace

TEST(MeanRhs, Examples) {
  EXPECT_EQ(mean_rhs(0.0, ModelParams(0.7, 0.0, 0.4, 0.3)), 0.0);
  const ModelParams eq(0.9, 0.2, 0.4, 0.4);
  EXPECT_NEAR(mean_rhs(0.2 / (1.0 + 0.2 - 0.9), eq), 0.0, 1e-15);
  EXPECT_NEAR(mean_rhs(0.5, kRef), 0.045, 1e-15);
}

TEST(MeanRhs, UnitIntervalForwardInvariant) {
  Rng rng = make_stream(1, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(rng, 1e-6);
    EXPECT_NEAR(mean_rhs(0.0, p), p.lambda2() * p.beta(), 1e-15);
    EXPECT_GE(mean_rhs(0.0, p), 0.0);
    EXPECT_NEAR(mean_rhs(1.0, p), p.lambda1() * (p.alpha() - 1.0), 1e-15);
    EXPECT_LE(mean_rhs(1.0, p), 1e-16);
  }
}

TEST(VarRhs, Examples) {
  EXPECT_DOUBLE_EQ(var_rhs(0.0, 0.0, 250.0, kRef), 0.5 / 500.0);
  EXPECT_NEAR(var_rhs(0.3, 0.0, 1e300, kRef), 0.0, 1e-300);
  // [2(0.54 - 0.1) - 1.1] 0.01 + 2(-0.1)(0.5)(0.01) + (0.1 * 0.5 + 0.5) / 2000
  EXPECT_NEAR(var_rhs(0.5, 0.01, 1000.0, kRef), -0.002925, 1e-15);
}

TEST(Equilibrium, Examples) {
  EXPECT_NEAR(equilibrium_mu(ModelParams(0.9, 0.2, 0.4, 0.4)), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(equilibrium_mu(ModelParams(1.0, 1.0, 0.4, 0.3)), 1.0, 1e-12);
  EXPECT_NEAR(mean_rhs(1.0, ModelParams(1.0, 1.0, 0.4, 0.3)), 0.0, 1e-15);
  // Without plasticity zero is stable exactly when l1 alpha < l2.
  EXPECT_EQ(equilibrium_mu(ModelParams(0.5, 0.0, 0.4, 0.3)), 0.0);
  const ModelParams growing(0.9, 0.0, 0.6, 0.3);
  const double root = equilibrium_mu(growing);
  EXPECT_GT(root, 0.0);
  EXPECT_NEAR(mean_rhs(root, growing), 0.0, 1e-12);
}

TEST(Equilibrium, StableRootAttractsInteriorStarts) {
  Rng rng = make_stream(2, 0);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_params(rng, 0.1);
    const double eq = equilibrium_mu(p);
    ASSERT_GE(eq, 0.0);
    ASSERT_LE(eq, 1.0);
    EXPECT_NEAR(mean_rhs(eq, p), 0.0, 1e-12);
    // Flow points toward the root from either side.
    if (eq > 1e-3) EXPECT_GT(mean_rhs(eq - 1e-3, p), 0.0);
    if (eq < 1.0 - 1e-3) EXPECT_LT(mean_rhs(eq + 1e-3, p), 0.0);
  }
}

TEST(NtMeanConstraint, Examples) {
  const std::vector<double> t{0.0, 2.0};
  const auto n = nt_mean_constraint(1000.0, t, std::vector<double>{0.0, 0.0}, 0.6, 0.5);
  EXPECT_NEAR(n[1], 1000.0 * std::exp(1.0), 1e-9);

  const auto grid = uniform_grid(0, 24, 2.0 / 3.0);
  const std::vector<double> half(grid.size(), 0.5);
  const auto nh = nt_mean_constraint(500.0, grid, half, 0.6, 0.2);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(nh[k] / (500.0 * std::exp(0.4 * grid[k])), 1.0, 1e-12);
}

TEST(NtMeanConstraint, EqualRatesGiveExponentialGrowth) {
  Rng rng = make_stream(3, 0);
  const auto grid = uniform_grid(0, 24, 2.0 / 3.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> m(grid.size());
    for (auto& x : m) x = uniform01(rng);
    const double lambda = uniform(rng, 0.01, std::numbers::ln2);
    const auto n = nt_mean_constraint(1000.0, grid, m, lambda, lambda);
    for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_EQ(n[k], 1000.0 * std::exp(lambda * grid[k]));
  }
}

TEST(NtMeanConstraint, ThirdsAgreeOnObservedPoints) {
  const std::vector<double> obs{0.0, 2.0, 4.0};
  const std::vector<double> refined{0.5, 0.45, 0.42, 0.4, 0.38, 0.37, 0.35};
  const auto thirds = nt_mean_constraint_thirds(1000.0, obs, refined, 0.6, 0.4);
  const auto coarse = nt_mean_constraint(1000.0, obs, std::vector<double>{0.5, 0.4, 0.35}, 0.6, 0.4);
  EXPECT_NEAR(thirds[3], coarse[1], 1e-9);
  EXPECT_NEAR(thirds[6], coarse[2], 1e-9);
  // Sub-grid point: one partial trapezoid from the interval start.
  const double h = 2.0 / 3.0;
  EXPECT_NEAR(thirds[2], 1000.0 * std::exp(0.2 * 0.5 * (0.5 + 0.42) * 2 * h + 0.4 * 2 * h), 1e-9);
}

TEST(NtVarConstraint, Examples) {
  EXPECT_NEAR(nt_var_constraint(0.5, 0.001, kRef), -450.0, 1e-9);
  const double mu0 = 0.5 * (1.0 - 2.0 * 0.2) / (2 * 0.6 * 0.9 - 2 * 0.5 * 0.2 + 0.5 - 0.6);
  EXPECT_NEAR(nt_var_constraint(mu0, 0.01, kRef), 0.0, 1e-12);
  EXPECT_NEAR(nt_var_constraint(0.3, 0.002, kRef), 0.5 * nt_var_constraint(0.3, 0.001, kRef), 1e-9);
  EXPECT_THROW(nt_var_constraint(0.5, 0.001, ModelParams(0.9, 0.2, 0.5, 0.5)), std::domain_error);
  EXPECT_THROW(nt_var_constraint(0.5, 0.0, kRef), std::domain_error);
}

TEST(ImprovedEuler, ZeroStepAndHandExpansion) {
  const auto same = improved_euler_step(0.3, 0.002, 1000, 1000, 0.0, kRef);
  EXPECT_EQ(same.mean, 0.3);
  EXPECT_EQ(same.variance, 0.002);

  const ModelParams p(0.7, 0.0, 0.4, 0.3);
  const double dt = 2.0 / 3.0, n = 800.0;
  const auto s = improved_euler_step(0.0, 0.0, n, n, dt, p);
  const double growth = 2.0 * 0.4 * 0.7 - 0.7;
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_NEAR(s.variance, dt * 0.3 / (2.0 * n) * (1.0 + 0.5 * growth * dt), 1e-16);
  EXPECT_TRUE(s.valid);
}

TEST(ImprovedEuler, FlagsNonPositiveVariance) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(improved_euler_step(0.0, 0.0, inf, inf, 0.5, ModelParams(0.7, 0.0, 0.4, 0.3)).valid);
  // A large step where the predicted mean overshoots far outside [0, 1].
  const auto s = improved_euler_step(0.96, 0.0044, 1000, 1000, 6.61, ModelParams(0.08, 0.21, 0.08, 0.64));
  EXPECT_LT(s.variance, 0.0);
  EXPECT_FALSE(s.valid);
}

TEST(ImprovedEuler, LocalErrorThirdOrder) {
  const double mu = 0.4, s2 = 0.003;
  std::vector<double> err;
  for (double dt : {0.4, 0.2}) {
    const auto ref = rk4_solve(kRef, mu, s2, 1000.0, std::vector<double>{0.0, dt}, 1e-4);
    const auto step = improved_euler_step(mu, s2, 1000.0, ref[1].nt, dt, kRef);
    err.push_back(std::abs(step.mean - ref[1].mu));
  }
  EXPECT_GT(err[0] / err[1], 7.0);
  EXPECT_LT(err[0] / err[1], 9.0);
}

// Repeated Heun steps against RK4 on [0, 24]: halving dt cuts the global
// error by about four. N is taken from the reference path at each grid point.
TEST(ImprovedEuler, GlobalOrderTwo) {
  Rng rng = make_stream(4, 0);
  for (int set = 0; set < 10; ++set) {
    const auto p = random_params(rng);
    const double mu0 = uniform(rng, 0.05, 0.95), s2_0 = uniform(rng, 0.0, 0.01);
    std::vector<double> error;
    for (double dt : {1.0 / 3.0, 1.0 / 6.0}) {
      const auto grid = uniform_grid(0.0, 24.0, dt);
      const auto ref = rk4_solve(p, mu0, s2_0, 1000.0, grid, 1e-3);
      double mu = mu0, s2 = s2_0, worst = 0.0;
      for (std::size_t k = 1; k < grid.size(); ++k) {
        const auto st = improved_euler_step(mu, s2, ref[k - 1].nt, ref[k].nt, grid[k] - grid[k - 1], p);
        mu = st.mean;
        s2 = st.variance;
        worst = std::max({worst, std::abs(mu - ref[k].mu), std::abs(s2 - ref[k].sigma2)});
      }
      error.push_back(worst);
    }
    const double factor = error[0] / error[1];
    EXPECT_GE(factor, 3.5) << "set " << set;
    EXPECT_LE(factor, 4.5) << "set " << set;
  }
}

TEST(Rk4, AbsorbingZero) {
  const auto path = rk4_solve(ModelParams(0.6, 0.0, 0.5, 0.3), 0.0, 0.0, 1000.0, uniform_grid(0, 24, 1));
  for (const auto& s : path) EXPECT_EQ(s.mu, 0.0);
}

TEST(Rk4, EqualRatesClosedForm) {
  const double lambda = 0.4, alpha = 0.7, beta = 0.3, mu0 = 0.1;
  const ModelParams p(alpha, beta, lambda, lambda);
  const double star = beta / (1.0 + beta - alpha);
  const auto grid = uniform_grid(0, 24, 2.0 / 3.0);
  const auto path = rk4_solve(p, mu0, 0.0, 1000.0, grid);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_NEAR(path[k].mu, star + (mu0 - star) * std::exp(-lambda * (1.0 + beta - alpha) * grid[k]), 1e-8);
    EXPECT_NEAR(path[k].nt / (1000.0 * std::exp(lambda * grid[k])), 1.0, 1e-10);
  }
}

TEST(Rk4, StepHalvingConverged) {
  const auto grid = uniform_grid(0, 24, 2);
  const auto a = rk4_solve(kRef, 0.2, 0.004, 1000.0, grid, 1e-3);
  const auto b = rk4_solve(kRef, 0.2, 0.004, 1000.0, grid, 5e-4);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_LT(std::abs(a[k].mu - b[k].mu), 1e-10);
    EXPECT_LT(std::abs(a[k].sigma2 - b[k].sigma2), 1e-10);
    EXPECT_LT(std::abs(a[k].nt / b[k].nt - 1.0), 1e-10);
  }
}

TEST(UniformGrid, Shape) {
  EXPECT_EQ(uniform_grid(0, 24, 2.0 / 3.0).size(), 37u);
  EXPECT_EQ(uniform_grid(0, 24, 2).size(), 13u);
  EXPECT_EQ(uniform_grid(0, 24, 2.0 / 3.0).back(), 24.0);
}

// The mean constraint tracks the simulated population better than the
// variance constraint does.
TEST(NtConstraints, MeanConstraintCloserToSimulation) {
  Rng rng = make_stream(5, 0);
  const auto grid = uniform_grid(0, 10, 1);
  int wins = 0;
  for (int trial = 0; trial < 10; ++trial) {
    ModelParams p = random_params(rng, 0.1, 0.4);
    while (std::abs(p.lambda1() - p.lambda2()) < 0.02) p = random_params(rng, 0.1, 0.4);
    SimConfig cfg;
    cfg.n0 = 200;
    cfg.mu0 = uniform(rng, 0.1, 0.9);
    cfg.t_end = grid.back();
    cfg.record_grid = grid;
    cfg.seed = 1000 + trial;
    const auto paths = simulate_replicates(cfg, p, 20);
    std::vector<double> m(grid.size(), 0.0), v(grid.size(), 0.0), n(grid.size(), 0.0);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      for (const auto& path : paths) {
        m[k] += path.proportion[k] / 20.0;
        n[k] += static_cast<double>(path.total[k]) / 20.0;
      }
      for (const auto& path : paths) v[k] += (path.proportion[k] - m[k]) * (path.proportion[k] - m[k]) / 19.0;
    }
    const auto from_mean = nt_mean_constraint(200.0, grid, m, p.lambda1(), p.lambda2());
    double err_mean = 0.0, err_var = 0.0;
    for (std::size_t k = 1; k < grid.size(); ++k) {
      err_mean = std::max(err_mean, std::abs(from_mean[k] / n[k] - 1.0));
      err_var = std::max(err_var, std::abs(nt_var_constraint(m[k], v[k], p) / n[k] - 1.0));
    }
    wins += err_mean < err_var;
  }
  EXPECT_GE(wins, 8);
}
