#pragma once

// Moment equations for the stem-cell proportion: right-hand sides, the two
// total-population constraints, the improved-Euler one-step map used by the
// likelihood, and a classical RK4 reference solver.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace plasticity {

/// d(mu)/dt = (l2 - l1) mu^2 + [l1 alpha - l2 (1 + beta)] mu + l2 beta
inline double mean_rhs(double mu, const ModelParams& p) {
  const double l1 = p.lambda1(), l2 = p.lambda2();
  return (l2 - l1) * mu * mu + (l1 * p.alpha() - l2 * (1.0 + p.beta())) * mu + l2 * p.beta();
}

/// d(sigma^2)/dt with the population size entering through the 1/(2 N) noise terms.
inline double var_rhs(double mu, double sigma2, double nt, const ModelParams& p) {
  const double l1 = p.lambda1(), l2 = p.lambda2();
  const double growth = 2.0 * (l1 * p.alpha() - l2 * p.beta()) - (l1 + l2) + 2.0 * (l2 - l1) * mu;
  return growth * sigma2 + ((l1 - l2) * mu + l2) / (2.0 * nt);
}

/// Stable equilibrium of the mean equation inside [0, 1].
///
/// mean_rhs(0) >= 0 and mean_rhs(1) <= 0 always, so [0, 1] holds a root. The
/// root returned is the one approached from interior starting points (where
/// the sign of the derivative flips from + to -). If the polynomial vanishes
/// identically every point is an equilibrium and `mu0` is returned.
inline double equilibrium_mu(const ModelParams& p, double mu0 = 0.5) {
  const double a = p.lambda2() - p.lambda1();
  const double b = p.lambda1() * p.alpha() - p.lambda2() * (1.0 + p.beta());
  const double c = p.lambda2() * p.beta();
  constexpr double eps = 1e-14;
  if (std::abs(a) < eps && std::abs(b) < eps && std::abs(c) < eps) return mu0;

  std::vector<double> roots;
  if (std::abs(a) < eps) {
    if (std::abs(b) >= eps) roots.push_back(-c / b);
  } else {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
      roots.push_back(q / a);
      if (q != 0.0) roots.push_back(c / q);
    }
  }
  std::vector<double> points{0.0, 1.0};
  for (double r : roots) {
    if (r > 0.0 && r < 1.0) points.push_back(r);
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  // Sign of the flow on each open sub-interval between consecutive candidates.
  std::vector<double> flow;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    flow.push_back(mean_rhs(0.5 * (points[i] + points[i + 1]), p));
  }
  if (flow.front() < 0.0) return 0.0;
  if (flow.back() > 0.0) return 1.0;
  for (std::size_t i = 0; i + 1 < flow.size(); ++i) {
    if (flow[i] > 0.0 && flow[i + 1] < 0.0) return points[i + 1];
  }
  // Flow vanishes on a whole sub-interval only in the identically-zero case.
  return std::clamp(mu0, 0.0, 1.0);
}

/// Total population on an observation grid from the mean constraint,
/// N_k = N0 exp((l1 - l2) * sum of trapezoids of m + l2 (t_k - t_0)).
inline std::vector<double> nt_mean_constraint(double n0, std::span<const double> times, std::span<const double> means,
                                              double lambda1, double lambda2) {
  if (times.size() != means.size()) throw std::invalid_argument("nt_mean_constraint: size mismatch");
  std::vector<double> out(times.size());
  if (times.empty()) return out;
  double area = 0.0;
  out[0] = n0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    area += 0.5 * (means[k - 1] + means[k]) * (times[k] - times[k - 1]);
    out[k] = n0 * std::exp((lambda1 - lambda2) * area + lambda2 * (times[k] - times[0]));
  }
  return out;
}

/// Log population on the thirds-refined grid t_k, t_k + h, t_k + 2h, t_{k+1}
/// (h = (t_{k+1} - t_k) / 3). Observed points accumulate full-interval
/// trapezoids over the observed means; each sub-grid point adds one partial
/// trapezoid from t_k using its own (latent) mean. `refined_means` holds the
/// means on the refined grid (observed values at multiples of 3).
inline std::vector<double> log_nt_thirds(double n0, std::span<const double> obs_times,
                                         std::span<const double> refined_means, double lambda1, double lambda2) {
  const std::size_t intervals = obs_times.size() - 1;
  if (refined_means.size() != 3 * intervals + 1) throw std::invalid_argument("log_nt_thirds: size mismatch");
  std::vector<double> out(refined_means.size());
  const double dl = lambda1 - lambda2;
  double log_nk = std::log(n0);
  out[0] = log_nk;
  for (std::size_t k = 0; k < intervals; ++k) {
    const double step = obs_times[k + 1] - obs_times[k];
    const double h = step / 3.0;
    const double mk = refined_means[3 * k];
    out[3 * k + 1] = log_nk + dl * 0.5 * (mk + refined_means[3 * k + 1]) * h + lambda2 * h;
    out[3 * k + 2] = log_nk + dl * 0.5 * (mk + refined_means[3 * k + 2]) * 2.0 * h + lambda2 * 2.0 * h;
    log_nk += dl * 0.5 * (mk + refined_means[3 * k + 3]) * step + lambda2 * step;
    out[3 * k + 3] = log_nk;
  }
  return out;
}

/// Population on the refined grid; see log_nt_thirds.
inline std::vector<double> nt_mean_constraint_thirds(double n0, std::span<const double> obs_times,
                                                     std::span<const double> refined_means, double lambda1,
                                                     double lambda2) {
  auto out = log_nt_thirds(n0, obs_times, refined_means, lambda1, lambda2);
  for (auto& x : out) x = std::exp(x);
  return out;
}

/// Population implied by equating the two variance equations. Diagnostic
/// only: it can be negative and is undefined for equal rates or zero variance.
inline double nt_var_constraint(double mu, double sigma2, const ModelParams& p) {
  const double l1 = p.lambda1(), l2 = p.lambda2();
  if (l1 == l2) throw std::domain_error("nt_var_constraint: undefined for lambda1 == lambda2");
  if (sigma2 == 0.0) throw std::domain_error("nt_var_constraint: undefined for zero variance");
  const double numer = (2.0 * l1 * p.alpha() - 2.0 * l2 * p.beta() + l2 - l1) * mu + l2 * (2.0 * p.beta() - 1.0);
  return numer / (2.0 * (l2 - l1) * sigma2);
}

/// Next-step mean and variance of the proportion from the improved-Euler map.
/// `valid` is false when the variance is not strictly positive (or not
/// finite); consumers treat such a step as impossible.
struct StepMoments {
  double mean = 0.0;
  double variance = 0.0;
  bool valid = false;
};

/// Predictor at (mu, sigma2, N_k), corrector at the predicted point with
/// N_{k+1}, result is the average of the two.
inline StepMoments improved_euler_step(double mu, double sigma2, double n_tk, double n_tk1, double dt,
                                       const ModelParams& p) {
  const double mu_pred = mu + dt * mean_rhs(mu, p);
  const double s2_pred = sigma2 + dt * var_rhs(mu, sigma2, n_tk, p);
  const double mu_corr = mu + dt * mean_rhs(mu_pred, p);
  const double s2_corr = sigma2 + dt * var_rhs(mu_pred, s2_pred, n_tk1, p);
  StepMoments out;
  out.mean = 0.5 * (mu_pred + mu_corr);
  out.variance = 0.5 * (s2_pred + s2_corr);
  out.valid = std::isfinite(out.mean) && std::isfinite(out.variance) && out.variance > 0.0;
  return out;
}

/// Classical fourth-order Runge-Kutta integration of the moment system with
/// the population advanced by dN/dt = [(l1 - l2) mu + l2] N. Each grid
/// interval is split into equal sub-steps no longer than `max_step`.
inline std::vector<MomentState> rk4_solve(const ModelParams& p, double mu0, double sigma2_0, double n0,
                                          std::span<const double> grid, double max_step = 1e-3) {
  if (grid.empty()) return {};
  if (!(max_step > 0.0)) throw std::invalid_argument("rk4_solve: max_step must be positive");
  const double l1 = p.lambda1(), l2 = p.lambda2();
  using State = std::array<double, 3>;  // mu, sigma2, log N
  auto rhs = [&](const State& s) -> State {
    const double nt = std::exp(s[2]);
    return {mean_rhs(s[0], p), var_rhs(s[0], s[1], nt, p), (l1 - l2) * s[0] + l2};
  };
  State s{mu0, sigma2_0, std::log(n0)};
  std::vector<MomentState> out;
  out.reserve(grid.size());
  out.push_back({s[0], s[1], n0, grid[0]});
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double span = grid[k] - grid[k - 1];
    const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(span / max_step - 1e-9)));
    const double h = span / static_cast<double>(steps);
    for (std::size_t j = 0; j < steps; ++j) {
      const State k1 = rhs(s);
      State tmp;
      for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
      const State k2 = rhs(tmp);
      for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
      const State k3 = rhs(tmp);
      for (int i = 0; i < 3; ++i) tmp[i] = s[i] + h * k3[i];
      const State k4 = rhs(tmp);
      for (int i = 0; i < 3; ++i) s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out.push_back({s[0], s[1], std::exp(s[2]), grid[k]});
  }
  return out;
}

/// Uniform grid t0, t0 + step, ..., covering [t0, t_end] (end included up to rounding).
inline std::vector<double> uniform_grid(double t0, double t_end, double step) {
  const auto n = static_cast<std::size_t>(std::llround((t_end - t0) / step));
  std::vector<double> g(n + 1);
  for (std::size_t i = 0; i <= n; ++i) g[i] = t0 + step * static_cast<double>(i);
  g.back() = t_end;
  return g;
}

}  // namespace plasticity
