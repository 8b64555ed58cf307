#pragma once

// Log-density kernels: the one-step conditional density of the sample
// mean and variance, its per-trajectory counterpart, whole-series
// log-likelihoods on plain or thirds-refined grids, and the log-prior.

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "dynamics.hpp"

namespace plasticity {

/// log Gamma(k / 2) for a positive integer k, by the recurrence
/// Gamma(x + 1) = x Gamma(x) from Gamma(1) = 1 and Gamma(1/2) = sqrt(pi).
inline double log_gamma_half(int k) {
  if (k <= 0) throw std::domain_error("log_gamma_half: k must be positive");
  double acc = (k % 2 == 0) ? 0.0 : 0.5 * std::log(std::numbers::pi);
  for (int j = (k % 2 == 0) ? 2 : 1; j + 2 <= k; j += 2) acc += std::log(0.5 * j);
  return acc;
}

/// Constants of the scaled chi-square factor for a fixed trajectory count.
class SummaryKernel {
 public:
  explicit SummaryKernel(int n) : n_{n} {
    if (n < 2) throw std::invalid_argument("trajectory count must be at least 2");
    const double dof = n - 1.0;
    constant_ = 0.5 * std::log(static_cast<double>(n)) - 0.5 * std::log(2.0 * std::numbers::pi) +
                0.5 * dof * std::log(dof) - 0.5 * dof * std::numbers::ln2 - log_gamma_half(n - 1);
  }

  int n() const { return n_; }

  /// log f(m_next, v_next) given the step moments (A, S):
  /// Normal(m_next; A, S / n) times the density of S / (n - 1) ChiSquare(n - 1) at v_next.
  double operator()(const StepMoments& step, double m_next, double v_next) const {
    if (!step.valid) return kNegInf;
    if (v_next < 0.0) return kNegInf;
    double log_v_term = 0.0;
    if (n_ != 3) {
      if (v_next == 0.0) return kNegInf;
      log_v_term = 0.5 * (n_ - 3) * std::log(v_next);
    }
    const double s = step.variance;
    const double dm = m_next - step.mean;
    return constant_ - 0.5 * n_ * std::log(s) + log_v_term - (n_ * dm * dm + (n_ - 1) * v_next) / (2.0 * s);
  }

 private:
  int n_;
  double constant_;
};

/// Inputs of one summary-data step: the (m, v) pair at both ends, the
/// trajectory count, the population at both ends and the step length.
struct StepDensityInput {
  double m_prev = 0.0;
  double v_prev = 0.0;
  double m_next = 0.0;
  double v_next = 0.0;
  int n = 5;
  double n_prev = 1000.0;
  double n_next = 1000.0;
  double dt = 2.0 / 3.0;
};

/// One-step conditional log-density of (m_next, v_next) given (m_prev, v_prev),
/// plugging the previous sample moments in for the true moments. Support
/// violations give -inf; NaN inputs throw.
inline double step_logdensity_summary(const StepDensityInput& in, const ModelParams& p) {
  for (double x : {in.m_prev, in.v_prev, in.m_next, in.v_next, in.n_prev, in.n_next, in.dt}) {
    if (std::isnan(x)) throw std::invalid_argument("step_logdensity_summary: NaN input");
  }
  const auto step = improved_euler_step(in.m_prev, in.v_prev, in.n_prev, in.n_next, in.dt, p);
  return SummaryKernel(in.n)(step, in.m_next, in.v_next);
}

/// Normal log-density of one trajectory's next proportion, with the
/// previous proportion as the mean and the previous variance set to zero.
inline double step_logdensity_trajectory(double r_prev, double r_next, double dt, double n_prev, double n_next,
                                         const ModelParams& p) {
  const auto step = improved_euler_step(r_prev, 0.0, n_prev, n_next, dt, p);
  if (!step.valid) return kNegInf;
  const double d = r_next - step.mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * step.variance) - d * d / (2.0 * step.variance);
}

/// Latent sample moments at the two interior thirds of every observation
/// interval: index 2k is t_k + h, index 2k + 1 is t_k + 2h with
/// h = (t_{k+1} - t_k) / 3. Empty means no augmentation.
struct AugmentedData {
  std::vector<double> m_mis;
  std::vector<double> v_mis;

  bool empty() const { return m_mis.empty(); }
};

inline constexpr double kVarianceFloor = 1e-8;

/// A path on the working grid: the observation grid itself, or its thirds
/// refinement (observed values at multiples of 3).
struct RefinedPath {
  std::vector<double> times;
  std::vector<double> m;
  std::vector<double> v;
  int factor = 1;
};

inline std::vector<double> thirds_times(std::span<const double> obs_times) {
  std::vector<double> out;
  out.reserve(3 * (obs_times.size() - 1) + 1);
  for (std::size_t k = 0; k + 1 < obs_times.size(); ++k) {
    const double h = (obs_times[k + 1] - obs_times[k]) / 3.0;
    out.push_back(obs_times[k]);
    out.push_back(obs_times[k] + h);
    out.push_back(obs_times[k] + 2.0 * h);
  }
  out.push_back(obs_times.back());
  return out;
}

inline RefinedPath refine(const SummarySeries& data, const AugmentedData& aug) {
  RefinedPath path;
  if (aug.empty()) {
    path.times = data.times;
    path.m = data.means;
    path.v = data.variances;
    return path;
  }
  const std::size_t intervals = data.intervals();
  if (aug.m_mis.size() != 2 * intervals || aug.v_mis.size() != 2 * intervals) {
    throw std::invalid_argument("augmented data does not match the thirds refinement of the observation grid");
  }
  path.factor = 3;
  path.times = thirds_times(data.times);
  path.m.resize(path.times.size());
  path.v.resize(path.times.size());
  for (std::size_t k = 0; k <= intervals; ++k) {
    path.m[3 * k] = data.means[k];
    path.v[3 * k] = data.variances[k];
    if (k < intervals) {
      for (std::size_t j = 0; j < 2; ++j) {
        path.m[3 * k + 1 + j] = aug.m_mis[2 * k + j];
        path.v[3 * k + 1 + j] = aug.v_mis[2 * k + j];
      }
    }
  }
  return path;
}

/// log N on the working grid from the mean constraint.
inline std::vector<double> working_log_nt(double n0, std::span<const double> obs_times, std::span<const double> times,
                                          std::span<const double> means, int factor, double lambda1, double lambda2) {
  if (factor == 3) return log_nt_thirds(n0, obs_times, means, lambda1, lambda2);
  auto nt = nt_mean_constraint(n0, times, means, lambda1, lambda2);
  for (auto& x : nt) x = std::log(x);
  return nt;
}

/// Sum of the one-step log-densities over consecutive working-grid points.
/// The density of the first observation is treated as constant.
inline double loglik_summary(const SummarySeries& data, const AugmentedData& aug, const ModelParams& p) {
  const auto path = refine(data, aug);
  const auto log_nt =
      working_log_nt(data.n0, data.times, path.times, path.m, path.factor, p.lambda1(), p.lambda2());
  const SummaryKernel kernel(data.n);
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < path.times.size(); ++j) {
    const double dt = path.times[j + 1] - path.times[j];
    const auto step = improved_euler_step(path.m[j], path.v[j], std::exp(log_nt[j]), std::exp(log_nt[j + 1]), dt, p);
    const double term = kernel(step, path.m[j + 1], path.v[j + 1]);
    if (term == kNegInf) return kNegInf;
    total += term;
  }
  return total;
}

/// Trajectory-data log-likelihood. `latent`, when non-empty, holds for each
/// trajectory the 2K thirds-grid values (same layout as AugmentedData::m_mis).
inline double loglik_trajectory(const TrajectorySeries& data, const std::vector<std::vector<double>>& latent,
                                const ModelParams& p) {
  const bool augmented = !latent.empty();
  if (augmented && latent.size() != data.trajectories()) {
    throw std::invalid_argument("latent trajectories do not match the data");
  }
  const std::size_t intervals = data.times.size() - 1;
  const auto times = augmented ? thirds_times(data.times) : data.times;
  double total = 0.0;
  std::vector<double> path(times.size());
  for (std::size_t i = 0; i < data.trajectories(); ++i) {
    if (augmented) {
      if (latent[i].size() != 2 * intervals) throw std::invalid_argument("latent trajectory has the wrong length");
      for (std::size_t k = 0; k <= intervals; ++k) {
        path[3 * k] = data.r[i][k];
        if (k < intervals) {
          path[3 * k + 1] = latent[i][2 * k];
          path[3 * k + 2] = latent[i][2 * k + 1];
        }
      }
    } else {
      path = data.r[i];
    }
    const auto log_nt =
        working_log_nt(data.n0, data.times, times, path, augmented ? 3 : 1, p.lambda1(), p.lambda2());
    for (std::size_t j = 0; j + 1 < times.size(); ++j) {
      const double term = step_logdensity_trajectory(path[j], path[j + 1], times[j + 1] - times[j],
                                                      std::exp(log_nt[j]), std::exp(log_nt[j + 1]), p);
      if (term == kNegInf) return kNegInf;
      total += term;
    }
  }
  return total;
}

/// Uniform log-prior over the sampled components of the variant. Parameters
/// that break the variant's constraints, or fall outside the prior ranges,
/// get -inf.
inline double log_prior(const ModelParams& p, const Priors& priors, ModelVariant variant) {
  if (!has_plasticity(variant) && p.beta() != 0.0) return kNegInf;
  if (has_equal_rates(variant) && p.lambda1() != p.lambda2()) return kNegInf;
  double lp = 0.0;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (!is_free(i, variant)) continue;
    const auto r = priors.range(i);
    const double x = p[i];
    // Rates have an open lower end at zero.
    const bool inside = (i >= 2) ? (x > r.lower && x <= r.upper) : r.contains(x);
    if (!inside) return kNegInf;
    lp -= std::log(r.width());
  }
  return lp;
}

/// Log-prior on raw values, for proposals that may leave the parameter bounds.
inline double log_prior(double alpha, double beta, double lambda1, double lambda2, const Priors& priors,
                        ModelVariant variant) {
  if (!ModelParams::in_bounds(alpha, beta, lambda1, lambda2)) return kNegInf;
  return log_prior(ModelParams(alpha, beta, lambda1, lambda2), priors, variant);
}

}  // namespace plasticity
