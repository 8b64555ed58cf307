#pragma once

// Exact (Gillespie direct-method) simulation of the two-type pure-birth
// branching process, plus the dataset generators used by the simulation
// studies.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "dynamics.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace plasticity {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Event rates in the order: stem symmetric (x+1), stem asymmetric (y+1),
/// non-stem symmetric (y+1), non-stem de-differentiation (x+1).
inline std::array<double, 4> gillespie_propensities(const PopulationState& s, const ModelParams& p) {
  const double x = static_cast<double>(s.x), y = static_cast<double>(s.y);
  return {p.lambda1() * p.alpha() * x, p.lambda1() * (1.0 - p.alpha()) * x, p.lambda2() * (1.0 - p.beta()) * y,
          p.lambda2() * p.beta() * y};
}

/// Both samplers are exact. `kDirect` draws an exponential waiting time per
/// event; `kUniformized` thins a dominating Poisson stream of candidate
/// events and only needs one uniform per candidate, which pays off for
/// populations of 10^6 cells and more.
enum class SimMethod { kDirect, kUniformized };

struct SimConfig {
  std::uint64_t n0 = 1000;
  double mu0 = 0.5;
  double t_end = 24.0;
  std::vector<double> record_grid;
  std::size_t replicates = 1;
  std::uint64_t seed = 1;
  /// Abort a trajectory whose population exceeds this size (0 = no limit).
  std::uint64_t max_population = 0;
  SimMethod method = SimMethod::kDirect;

  void validate() const {
    if (n0 < 1) throw ValidationError("n0 must be at least 1");
    if (!(mu0 >= 0.0 && mu0 <= 1.0)) throw ValidationError("mu0 must lie in [0, 1]");
    if (replicates < 1) throw ValidationError("replicates must be at least 1");
    if (record_grid.empty()) throw ValidationError("record grid is empty");
    for (std::size_t k = 0; k < record_grid.size(); ++k) {
      if (record_grid[k] < 0.0 || record_grid[k] > t_end) throw ValidationError("record grid must lie in [0, t_end]");
      if (k > 0 && !(record_grid[k] > record_grid[k - 1])) throw ValidationError("record grid must be increasing");
    }
  }

  /// Initial stem-cell count, mu0 * n0 rounded half-up.
  std::uint64_t initial_x() const {
    return static_cast<std::uint64_t>(std::floor(mu0 * static_cast<double>(n0) + 0.5));
  }
};

/// One trajectory sampled on the record grid.
struct TrajectoryPath {
  std::vector<double> proportion;     // x / (x + y)
  std::vector<std::uint64_t> total;  // x + y
};

namespace detail {

inline void check_population(const SimConfig& cfg, std::uint64_t total) {
  if (cfg.max_population != 0 && total > cfg.max_population) {
    throw SimulationError("population exceeded " + std::to_string(cfg.max_population) + " cells");
  }
}

/// Thinned-Poisson sampler. Within a window the candidate stream has rate
/// bound = current rate + max(l1, l2) * budget, which dominates the true rate
/// until `budget` more cells are born. Candidate times are never drawn
/// individually: the candidate count over the window is Poisson and, if the
/// budget runs out at candidate j of C, the restart time is the j-th order
/// statistic of C uniforms, i.e. Beta(j, C - j + 1) distributed.
inline TrajectoryPath simulate_uniformized(const SimConfig& cfg, const ModelParams& p, Rng& rng) {
  const auto& grid = cfg.record_grid;
  TrajectoryPath out;
  out.proportion.reserve(grid.size());
  out.total.reserve(grid.size());

  std::uint64_t x = cfg.initial_x();
  std::uint64_t y = cfg.n0 - x;
  const double l1 = p.lambda1(), l2 = p.lambda2();
  const double sym_x = l1 * p.alpha();
  const double sym_y = l2 * (1.0 - p.beta());
  const double l_max = std::max(l1, l2);

  double t = 0.0;
  for (double t_rec : grid) {
    while (t < t_rec) {
      const std::uint64_t budget = std::max<std::uint64_t>(1, (x + y) / 64);
      double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double bound = l1 * fx + l2 * fy + l_max * static_cast<double>(budget);
      std::poisson_distribution<std::uint64_t> count_dist(bound * (t_rec - t));
      const std::uint64_t candidates = count_dist(rng);
      std::uint64_t born = 0;
      std::uint64_t j = 0;
      bool exhausted = false;
      while (j < candidates) {
        ++j;
        const double u = uniform01(rng) * bound;
        const double rate_x = l1 * fx;
        const double rate = rate_x + l2 * fy;
        // Branch-free classification; u >= rate rejects the candidate.
        const std::uint64_t to_x = (u < sym_x * fx) | ((u >= rate_x + sym_y * fy) & (u < rate));
        const std::uint64_t to_y = (u >= sym_x * fx) & (u < rate_x + sym_y * fy);
        x += to_x;
        y += to_y;
        fx = static_cast<double>(x);
        fy = static_cast<double>(y);
        born += to_x | to_y;
        if (born == budget) {
          exhausted = true;
          break;
        }
      }
      check_population(cfg, x + y);
      if (exhausted && j < candidates) {
        std::gamma_distribution<double> head(static_cast<double>(j)), tail(static_cast<double>(candidates - j + 1));
        const double g1 = head(rng), g2 = tail(rng);
        t += (t_rec - t) * (g1 / (g1 + g2));
      } else {
        t = t_rec;
      }
    }
    out.proportion.push_back(static_cast<double>(x) / static_cast<double>(x + y));
    out.total.push_back(x + y);
  }
  return out;
}

}  // namespace detail

/// Simulates one trajectory from t = 0. The value recorded at a grid time is
/// the state after the last event at or before that time.
inline TrajectoryPath simulate_trajectory(const SimConfig& cfg, const ModelParams& p, Rng& rng) {
  if (cfg.method == SimMethod::kUniformized) return detail::simulate_uniformized(cfg, p, rng);
  const auto& grid = cfg.record_grid;
  TrajectoryPath out;
  out.proportion.reserve(grid.size());
  out.total.reserve(grid.size());

  std::uint64_t x = cfg.initial_x();
  std::uint64_t y = cfg.n0 - x;
  const double l1 = p.lambda1(), l2 = p.lambda2();
  const double sym_x = l1 * p.alpha();
  const double sym_y = l2 * (1.0 - p.beta());

  auto record = [&] {
    out.proportion.push_back(static_cast<double>(x) / static_cast<double>(x + y));
    out.total.push_back(x + y);
  };

  double t = 0.0;
  std::size_t next = 0;
  while (next < grid.size()) {
    const double fx = static_cast<double>(x), fy = static_cast<double>(y);
    const double rate_x = l1 * fx;
    const double total_rate = rate_x + l2 * fy;
    const double t_next = t + exponential1(rng) / total_rate;
    while (next < grid.size() && grid[next] < t_next) {
      record();
      ++next;
    }
    if (next == grid.size()) break;
    t = t_next;
    const double u = uniform01(rng) * total_rate;
    if (u < sym_x * fx || u >= rate_x + sym_y * fy) {
      ++x;
    } else {
      ++y;
    }
    detail::check_population(cfg, x + y);
  }
  return out;
}

/// `count` independent trajectories; trajectory i uses stream i of cfg.seed.
inline std::vector<TrajectoryPath> simulate_replicates(const SimConfig& cfg, const ModelParams& p, std::size_t count,
                                                       unsigned max_threads = 0) {
  cfg.validate();
  std::vector<TrajectoryPath> paths(count);
  parallel_for(
      count,
      [&](std::size_t i) {
        Rng rng = make_stream(cfg.seed, i);
        paths[i] = simulate_trajectory(cfg, p, rng);
      },
      max_threads);
  return paths;
}

/// Per-grid-point sample mean and unbiased variance (divisor n - 1) of `n`
/// independent trajectories started from the same composition.
inline SummarySeries synthesize_summary_gillespie(const SimConfig& cfg, const ModelParams& p, int n,
                                                  unsigned max_threads = 0) {
  if (n < 2) throw ValidationError("at least two trajectories are required for a sample variance");
  auto paths = simulate_replicates(cfg, p, static_cast<std::size_t>(n), max_threads);
  SummarySeries s;
  s.times = cfg.record_grid;
  s.n = n;
  s.n0 = static_cast<double>(cfg.n0);
  const std::size_t len = cfg.record_grid.size();
  s.means.assign(len, 0.0);
  s.variances.assign(len, 0.0);
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0;
    for (const auto& path : paths) sum += path.proportion[k];
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& path : paths) ss += (path.proportion[k] - mean) * (path.proportion[k] - mean);
    s.means[k] = mean;
    s.variances[k] = ss / (n - 1);
  }
  return s;
}

inline TrajectorySeries synthesize_trajectories_gillespie(const SimConfig& cfg, const ModelParams& p, int n,
                                                          unsigned max_threads = 0) {
  if (n < 1) throw ValidationError("at least one trajectory is required");
  auto paths = simulate_replicates(cfg, p, static_cast<std::size_t>(n), max_threads);
  TrajectorySeries ts;
  ts.times = cfg.record_grid;
  ts.n0 = static_cast<double>(cfg.n0);
  for (auto& path : paths) ts.r.push_back(std::move(path.proportion));
  return ts;
}

/// Samples a summary series step by step from the model's own conditional
/// law: M ~ Normal(A, S / n) truncated to [0, 1] and V ~ S / (n - 1) *
/// ChiSquare(n - 1), with (A, S) from the improved-Euler map at the previous
/// sampled (m, v). The population at the step end is evaluated with the
/// predicted mean A standing in for the not-yet-sampled m.
inline SummarySeries synthesize_summary_conditional(const ModelParams& p, double m0, double v0,
                                                    const std::vector<double>& grid, int n, double n0, Rng& rng) {
  if (n < 2) throw ValidationError("at least two trajectories are required");
  if (!(v0 >= 0.0)) throw ValidationError("v0 must be non-negative");
  if (!(m0 >= 0.0 && m0 <= 1.0)) throw ValidationError("m0 must lie in [0, 1]");
  if (grid.size() < 2) throw ValidationError("grid needs at least two points");
  SummarySeries s;
  s.times = grid;
  s.n = n;
  s.n0 = n0;
  s.means.reserve(grid.size());
  s.variances.reserve(grid.size());
  s.means.push_back(m0);
  s.variances.push_back(v0);
  double m = m0, v = v0, nt = n0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double dt = grid[k] - grid[k - 1];
    const double a = improved_euler_step(m, v, nt, nt, dt, p).mean;
    const double nt_next = nt * std::exp((p.lambda1() - p.lambda2()) * 0.5 * (m + a) * dt + p.lambda2() * dt);
    const auto step = improved_euler_step(m, v, nt, nt_next, dt, p);
    if (!step.valid) {
      throw SimulationError("non-positive step variance at t = " + std::to_string(grid[k]));
    }
    const double sd = std::sqrt(step.variance / n);
    double m_next = normal(rng, step.mean, sd);
    for (int attempt = 0; attempt < 1000 && (m_next < 0.0 || m_next > 1.0); ++attempt) {
      m_next = normal(rng, step.mean, sd);
    }
    m_next = std::clamp(m_next, 0.0, 1.0);
    const double v_next = step.variance / (n - 1) * chi_squared(rng, n - 1);
    // Population advances with the sampled means, as the likelihood does.
    nt = nt * std::exp((p.lambda1() - p.lambda2()) * 0.5 * (m + m_next) * dt + p.lambda2() * dt);
    m = m_next;
    v = v_next;
    s.means.push_back(m);
    s.variances.push_back(v);
  }
  return s;
}

}  // namespace plasticity
