#pragma once

// Metropolis-within-Gibbs sampling of the model parameters and the latent
// thirds-grid values, multi-chain orchestration and convergence checks.
//
// A "target" owns the data and a cache of per-step log-density terms so
// that a latent update only recomputes the two steps it touches. Both
// targets expose the same interface and share one sweep implementation.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "diagnostics.hpp"
#include "dynamics.hpp"
#include "likelihood.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace plasticity {

enum class Augmentation {
  kAuto,  // augment when any observation interval is longer than 2/3 day
  kOn,
  kOff,
};

inline constexpr double kNativeStep = 2.0 / 3.0;

inline bool needs_augmentation(const std::vector<double>& times, Augmentation mode) {
  if (mode == Augmentation::kOn) return true;
  if (mode == Augmentation::kOff) return false;
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (times[k] - times[k - 1] > kNativeStep + 1e-9) return true;
  }
  return false;
}

struct ChainConfig {
  std::size_t iterations = 50000;
  std::size_t chains = 4;
  std::uint64_t seed = 1;
  /// Initial random-walk half-widths for (alpha, beta, lambda1, lambda2).
  std::array<double, kNumParams> proposal_scales{0.05, 0.05, 0.02, 0.02};
  double rhat_threshold = 1.1;
  /// Acceptance rate the burn-in adaptation steers toward.
  double target_acceptance = 0.3;
  Priors priors;
  /// Components pinned to a known value (never updated).
  std::array<std::optional<double>, kNumParams> fixed{};
  /// Common starting point for every chain instead of prior draws.
  std::optional<std::array<double, kNumParams>> initial;
  Augmentation augmentation = Augmentation::kAuto;
  /// Temper the likelihood in parameter updates over the first part of
  /// burn-in, raising its power geometrically from `anneal_start` to 1.
  bool anneal = true;
  double anneal_start = 1e-4;
  double anneal_fraction = 0.6;
  /// Follow the per-parameter updates with random-walk updates of the
  /// structural coordinates (see to_structural).
  bool structural_moves = true;
  double structural_scale = 0.02;
  /// Ignore the likelihood and sample the prior (latent values stay put).
  bool prior_only = false;
  /// Every this many iterations compare the cached log-likelihood against a
  /// full recomputation (0 disables the check).
  std::size_t audit_interval = 0;
  unsigned max_threads = 0;

  void validate() const {
    if (iterations < 1000) throw ValidationError("iterations must be at least 1000");
    if (chains < 2) throw ValidationError("at least two chains are required");
    if (!(rhat_threshold > 1.0)) throw ValidationError("rhat threshold must exceed 1");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw ValidationError("target acceptance must be in (0, 1)");
    for (double s : proposal_scales) {
      if (!(s > 0.0)) throw ValidationError("proposal scales must be positive");
    }
    priors.validate();
  }

  std::size_t burn_in() const { return iterations / 2; }
  std::size_t retained() const { return iterations - burn_in(); }
};

/// Whether component i is updated by the sampler.
inline bool is_sampled(std::size_t i, ModelVariant variant, const ChainConfig& cfg) {
  return is_free(i, variant) && !cfg.fixed[i].has_value();
}

/// Reflects x into [lo, hi]; exact for steps shorter than the interval width.
inline double reflect(double x, double lo, double hi) {
  if (x < lo) x = 2.0 * lo - x;
  if (x > hi) x = 2.0 * hi - x;
  return x;
}

/// Starting values for the latent thirds: means interpolated linearly between
/// the bracketing observations, variances set to the bracketing average.
inline AugmentedData initial_augmentation(const SummarySeries& data) {
  AugmentedData aug;
  for (std::size_t k = 0; k < data.intervals(); ++k) {
    const double v_avg = std::max(kVarianceFloor, 0.5 * (data.variances[k] + data.variances[k + 1]));
    for (int j = 1; j <= 2; ++j) {
      const double w = j / 3.0;
      aug.m_mis.push_back((1.0 - w) * data.means[k] + w * data.means[k + 1]);
      aug.v_mis.push_back(v_avg);
    }
  }
  return aug;
}

namespace detail {

/// Working-grid index of latent point q (two per observation interval).
inline std::size_t latent_grid_index(std::size_t q) { return 3 * (q / 2) + 1 + (q % 2); }

/// log N at a sub-grid point r given log N at its interval start.
inline double sub_grid_log_nt(double log_n_start, double m_start, double m_here, double h, int sub, double lambda1,
                              double lambda2) {
  return log_n_start + (lambda1 - lambda2) * 0.5 * (m_start + m_here) * h * sub + lambda2 * h * sub;
}

}  // namespace detail

/// Summary-data posterior target: observed (m, v) plus, when augmented, the
/// latent (m, v) at every interior third.
class SummaryTarget {
 public:
  SummaryTarget(const SummarySeries& data, bool augment)
      : obs_times_{data.times}, kernel_{data.n}, n0_{data.n0} {
    data.validate();
    path_ = refine(data, augment ? initial_augmentation(data) : AugmentedData{});
    const std::size_t points = path_.times.size();
    log_nt_.assign(points, 0.0);
    nt_.assign(points, 0.0);
    terms_.assign(points - 1, 0.0);
  }

  bool augmented() const { return path_.factor == 3; }

  /// Latent entries in time order, mean before variance at each point.
  std::size_t latent_count() const { return augmented() ? 4 * (obs_times_.size() - 1) : 0; }

  double latent_value(std::size_t i) const {
    const std::size_t r = detail::latent_grid_index(i / 2);
    return (i % 2 == 0) ? path_.m[r] : path_.v[r];
  }
  double latent_lower(std::size_t i) const { return (i % 2 == 0) ? 0.0 : kVarianceFloor; }
  double latent_upper(std::size_t i) const {
    return (i % 2 == 0) ? 1.0 : std::numeric_limits<double>::infinity();
  }
  double latent_initial_scale(std::size_t i) const {
    return (i % 2 == 0) ? 0.01 : 0.5 * latent_value(i) + 1e-7;
  }
  double latent_max_scale(std::size_t i) const { return (i % 2 == 0) ? 0.5 : 1.0; }

  double loglik() const { return total_; }

  double propose_params(const ModelParams& p) {
    pending_params_ = p;
    pending_total_ = compute_all(p, pending_log_nt_, pending_nt_, pending_terms_);
    return pending_total_;
  }

  void accept_params() {
    params_ = *pending_params_;
    std::swap(log_nt_, pending_log_nt_);
    std::swap(nt_, pending_nt_);
    std::swap(terms_, pending_terms_);
    total_ = pending_total_;
  }

  const ModelParams& params() const { return *params_; }

  double propose_latent(std::size_t i, double value) {
    const ModelParams& p = *params_;
    const std::size_t r = detail::latent_grid_index(i / 2);
    const std::size_t start = 3 * (r / 3);
    const bool is_mean = (i % 2 == 0);
    double& slot = is_mean ? path_.m[r] : path_.v[r];
    const double saved = slot;
    const double saved_nt = nt_[r];
    slot = value;
    double log_nt_r = log_nt_[r];
    if (is_mean) {
      const double h = (obs_times_[start / 3 + 1] - obs_times_[start / 3]) / 3.0;
      log_nt_r = detail::sub_grid_log_nt(log_nt_[start], path_.m[start], value, h, static_cast<int>(r - start),
                                         p.lambda1(), p.lambda2());
      nt_[r] = std::exp(log_nt_r);
    }
    const double left = term(r - 1, p), right = term(r, p);
    slot = saved;
    nt_[r] = saved_nt;
    pending_latent_ = {i, r, value, log_nt_r, left, right};
    if (left == kNegInf || right == kNegInf) return kNegInf;
    return total_ - terms_[r - 1] - terms_[r] + left + right;
  }

  void accept_latent() {
    const auto& pl = pending_latent_;
    if (pl.index % 2 == 0) {
      path_.m[pl.r] = pl.value;
      log_nt_[pl.r] = pl.log_nt;
      nt_[pl.r] = std::exp(pl.log_nt);
    } else {
      path_.v[pl.r] = pl.value;
    }
    total_ += (pl.left - terms_[pl.r - 1]) + (pl.right - terms_[pl.r]);
    terms_[pl.r - 1] = pl.left;
    terms_[pl.r] = pl.right;
  }

  /// Full recomputation at the current state, for auditing the cache.
  double recompute() const {
    std::vector<double> log_nt, nt, terms;
    return compute_all(*params_, log_nt, nt, terms);
  }

  /// Current latent values as AugmentedData.
  AugmentedData augmentation() const {
    AugmentedData aug;
    for (std::size_t q = 0; q < latent_count() / 2; ++q) {
      const std::size_t r = detail::latent_grid_index(q);
      aug.m_mis.push_back(path_.m[r]);
      aug.v_mis.push_back(path_.v[r]);
    }
    return aug;
  }

 private:
  struct PendingLatent {
    std::size_t index = 0, r = 0;
    double value = 0.0, log_nt = 0.0, left = 0.0, right = 0.0;
  };

  double term(std::size_t j, const ModelParams& p) const {
    const auto step = improved_euler_step(path_.m[j], path_.v[j], nt_[j], nt_[j + 1],
                                          path_.times[j + 1] - path_.times[j], p);
    return kernel_(step, path_.m[j + 1], path_.v[j + 1]);
  }

  double compute_all(const ModelParams& p, std::vector<double>& log_nt, std::vector<double>& nt,
                     std::vector<double>& terms) const {
    log_nt = working_log_nt(n0_, obs_times_, path_.times, path_.m, path_.factor, p.lambda1(), p.lambda2());
    nt.resize(log_nt.size());
    for (std::size_t j = 0; j < log_nt.size(); ++j) nt[j] = std::exp(log_nt[j]);
    terms.resize(path_.times.size() - 1);
    double total = 0.0;
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const auto step =
          improved_euler_step(path_.m[j], path_.v[j], nt[j], nt[j + 1], path_.times[j + 1] - path_.times[j], p);
      terms[j] = kernel_(step, path_.m[j + 1], path_.v[j + 1]);
      total += terms[j];
    }
    return std::isnan(total) ? kNegInf : total;
  }

  std::vector<double> obs_times_;
  SummaryKernel kernel_;
  double n0_;
  RefinedPath path_;
  std::optional<ModelParams> params_, pending_params_;
  std::vector<double> log_nt_, nt_, terms_;
  std::vector<double> pending_log_nt_, pending_nt_, pending_terms_;
  double total_ = kNegInf, pending_total_ = kNegInf;
  PendingLatent pending_latent_;
};

/// Trajectory-data posterior target; latent values are per-trajectory
/// proportions at the interior thirds.
class TrajectoryTarget {
 public:
  TrajectoryTarget(const TrajectorySeries& data, bool augment) : obs_times_{data.times}, n0_{data.n0} {
    data.validate();
    const std::size_t intervals = data.times.size() - 1;
    times_ = augment ? thirds_times(data.times) : data.times;
    factor_ = augment ? 3 : 1;
    for (const auto& obs : data.r) {
      std::vector<double> path;
      if (augment) {
        path.resize(times_.size());
        for (std::size_t k = 0; k <= intervals; ++k) {
          path[3 * k] = obs[k];
          if (k < intervals) {
            path[3 * k + 1] = (2.0 * obs[k] + obs[k + 1]) / 3.0;
            path[3 * k + 2] = (obs[k] + 2.0 * obs[k + 1]) / 3.0;
          }
        }
      } else {
        path = obs;
      }
      paths_.push_back(std::move(path));
    }
    const std::size_t n = paths_.size();
    log_nt_.assign(n, std::vector<double>(times_.size()));
    nt_ = log_nt_;
    terms_.assign(n, std::vector<double>(times_.size() - 1));
  }

  bool augmented() const { return factor_ == 3; }

  /// Latent entries ordered by time point, then trajectory.
  std::size_t latent_count() const { return augmented() ? 2 * (obs_times_.size() - 1) * paths_.size() : 0; }

  double latent_value(std::size_t i) const {
    const auto [traj, r] = locate(i);
    return paths_[traj][r];
  }
  double latent_lower(std::size_t) const { return 0.0; }
  double latent_upper(std::size_t) const { return 1.0; }
  double latent_initial_scale(std::size_t) const { return 0.01; }
  double latent_max_scale(std::size_t) const { return 0.5; }

  double loglik() const { return total_; }
  const ModelParams& params() const { return *params_; }

  double propose_params(const ModelParams& p) {
    pending_params_ = p;
    pending_total_ = compute_all(p, pending_log_nt_, pending_nt_, pending_terms_);
    return pending_total_;
  }

  void accept_params() {
    params_ = *pending_params_;
    std::swap(log_nt_, pending_log_nt_);
    std::swap(nt_, pending_nt_);
    std::swap(terms_, pending_terms_);
    total_ = pending_total_;
  }

  double propose_latent(std::size_t i, double value) {
    const ModelParams& p = *params_;
    const auto [traj, r] = locate(i);
    const std::size_t start = 3 * (r / 3);
    auto& path = paths_[traj];
    const double saved = path[r];
    const double saved_nt = nt_[traj][r];
    const double h = (obs_times_[start / 3 + 1] - obs_times_[start / 3]) / 3.0;
    const double log_nt_r = detail::sub_grid_log_nt(log_nt_[traj][start], path[start], value, h,
                                                    static_cast<int>(r - start), p.lambda1(), p.lambda2());
    path[r] = value;
    nt_[traj][r] = std::exp(log_nt_r);
    const double left = term(traj, r - 1, p), right = term(traj, r, p);
    path[r] = saved;
    nt_[traj][r] = saved_nt;
    pending_latent_ = {traj, r, value, log_nt_r, left, right};
    if (left == kNegInf || right == kNegInf) return kNegInf;
    return total_ - terms_[traj][r - 1] - terms_[traj][r] + left + right;
  }

  void accept_latent() {
    const auto& pl = pending_latent_;
    paths_[pl.traj][pl.r] = pl.value;
    log_nt_[pl.traj][pl.r] = pl.log_nt;
    nt_[pl.traj][pl.r] = std::exp(pl.log_nt);
    auto& terms = terms_[pl.traj];
    total_ += (pl.left - terms[pl.r - 1]) + (pl.right - terms[pl.r]);
    terms[pl.r - 1] = pl.left;
    terms[pl.r] = pl.right;
  }

  double recompute() const {
    std::vector<std::vector<double>> log_nt, nt, terms;
    return compute_all(*params_, log_nt, nt, terms);
  }

  /// Latent values per trajectory in the AugmentedData index layout.
  std::vector<std::vector<double>> latent_paths() const {
    std::vector<std::vector<double>> out(paths_.size());
    if (!augmented()) return {};
    for (std::size_t traj = 0; traj < paths_.size(); ++traj) {
      for (std::size_t q = 0; q < 2 * (obs_times_.size() - 1); ++q) {
        out[traj].push_back(paths_[traj][detail::latent_grid_index(q)]);
      }
    }
    return out;
  }

 private:
  struct PendingLatent {
    std::size_t traj = 0, r = 0;
    double value = 0.0, log_nt = 0.0, left = 0.0, right = 0.0;
  };

  std::pair<std::size_t, std::size_t> locate(std::size_t i) const {
    const std::size_t n = paths_.size();
    return {i % n, detail::latent_grid_index(i / n)};
  }

  double term(std::size_t traj, std::size_t j, const ModelParams& p) const {
    const auto& path = paths_[traj];
    return step_logdensity_trajectory(path[j], path[j + 1], times_[j + 1] - times_[j], nt_[traj][j],
                                      nt_[traj][j + 1], p);
  }

  double compute_all(const ModelParams& p, std::vector<std::vector<double>>& log_nt,
                     std::vector<std::vector<double>>& nt, std::vector<std::vector<double>>& terms) const {
    const std::size_t n = paths_.size();
    log_nt.resize(n);
    nt.resize(n);
    terms.resize(n);
    double total = 0.0;
    for (std::size_t traj = 0; traj < n; ++traj) {
      const auto& path = paths_[traj];
      log_nt[traj] = working_log_nt(n0_, obs_times_, times_, path, factor_, p.lambda1(), p.lambda2());
      nt[traj].resize(times_.size());
      for (std::size_t j = 0; j < times_.size(); ++j) nt[traj][j] = std::exp(log_nt[traj][j]);
      terms[traj].resize(times_.size() - 1);
      for (std::size_t j = 0; j + 1 < times_.size(); ++j) {
        terms[traj][j] = step_logdensity_trajectory(path[j], path[j + 1], times_[j + 1] - times_[j], nt[traj][j],
                                                    nt[traj][j + 1], p);
        total += terms[traj][j];
      }
    }
    return std::isnan(total) ? kNegInf : total;
  }

  std::vector<double> obs_times_;
  std::vector<double> times_;
  int factor_ = 1;
  double n0_;
  std::vector<std::vector<double>> paths_;
  std::optional<ModelParams> params_, pending_params_;
  std::vector<std::vector<double>> log_nt_, nt_, terms_;
  std::vector<std::vector<double>> pending_log_nt_, pending_nt_, pending_terms_;
  double total_ = kNegInf, pending_total_ = kNegInf;
  PendingLatent pending_latent_;
};

/// Retained output of one chain.
struct ChainResult {
  std::vector<std::array<double, kNumParams>> draws;
  std::vector<double> log_posterior;
  /// Posterior mean of each latent entry over the retained iterations.
  std::vector<double> latent_mean;
  /// Post-burn-in acceptance rate per parameter (NaN for pinned ones).
  std::array<double, kNumParams> acceptance{};
  double latent_acceptance = std::numeric_limits<double>::quiet_NaN();
  double structural_acceptance = std::numeric_limits<double>::quiet_NaN();
  std::array<double, kNumParams> final_scales{};
  /// Largest |cached - recomputed| log-likelihood seen by the audit.
  double max_drift = 0.0;
};

namespace detail {

/// Metropolis acceptance test that treats a -inf current state as always
/// improvable and a -inf proposal as always rejected.
inline bool accept_move(double proposed, double current, Rng& rng) {
  if (proposed == kNegInf || std::isnan(proposed)) return false;
  if (current == kNegInf) return true;
  const double log_ratio = proposed - current;
  return log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio;
}

/// Structural coordinates of the parameter vector: the stable root mu* of
/// the mean quadratic q(mu) = a mu^2 + b mu + c, its relaxation rate
/// kappa = -q'(mu*), the late-time population growth rate g = l2 - a mu*
/// and, for the full model, the curvature a. The data pin mu* and g far
/// more tightly than any single rate or probability, so random-walk moves
/// in these coordinates travel along the narrow ridges of the posterior.
/// `log_factor` is log|d theta / d phi| over the free components, i.e. the
/// density of phi is the posterior times exp(log_factor).
struct Structural {
  std::array<double, kNumParams> phi{};
  std::size_t dim = 0;
  double log_factor = 0.0;
};

inline std::optional<Structural> to_structural(const std::array<double, kNumParams>& t, ModelVariant variant) {
  const double alpha = t[0], beta = t[1], l1 = t[2], l2 = t[3];
  const double a = l2 - l1, b = l1 * alpha - l2 * (1.0 + beta), c = l2 * beta;
  Structural s;
  switch (variant) {
    case ModelVariant::kFull: {
      const double disc = b * b - 4.0 * a * c;
      if (!(disc > 0.0)) return std::nullopt;
      const double kappa = std::sqrt(disc);
      // Root with slope -kappa, in the cancellation-free form.
      double root;
      if (kappa - b != 0.0) {
        root = 2.0 * c / (kappa - b);
      } else if (a != 0.0) {
        root = (-b - kappa) / (2.0 * a);
      } else {
        return std::nullopt;
      }
      s.phi = {root, kappa, l2 - a * root, a};
      s.dim = 4;
      s.log_factor = std::log(kappa) - std::log(l1) - std::log(l2);
      break;
    }
    case ModelVariant::kHierarchy: {
      // Only the regime with an interior equilibrium (b > 0, hence a < 0).
      if (!(b > 0.0) || !(a < 0.0)) return std::nullopt;
      const double root = -b / a;
      s.phi = {root, b, l2 + b, 0.0};
      s.dim = 3;
      s.log_factor = std::log(b) - 2.0 * std::log(root) - std::log(l1);
      break;
    }
    case ModelVariant::kEqualRates: {
      if (!(b < 0.0)) return std::nullopt;
      s.phi = {c / -b, -b, l1, 0.0};
      s.dim = 3;
      s.log_factor = std::log(-b) - 2.0 * std::log(l1);
      break;
    }
    case ModelVariant::kHierarchyEqual: {
      const double kappa = l1 * (1.0 - alpha);
      if (!(kappa > 0.0)) return std::nullopt;
      s.phi = {kappa, l1, 0.0, 0.0};
      s.dim = 2;
      s.log_factor = -std::log(l1);
      break;
    }
  }
  if (!std::isfinite(s.log_factor)) return std::nullopt;
  return s;
}

/// Inverse of to_structural; the result may lie outside the parameter box.
inline std::array<double, kNumParams> from_structural(const std::array<double, kNumParams>& phi, ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kFull: {
      const double root = phi[0], kappa = phi[1], g = phi[2], a = phi[3];
      const double b = -kappa - 2.0 * a * root, c = a * root * root + kappa * root;
      const double l2 = g + a * root, l1 = l2 - a;
      return {(b + l2 + c) / l1, c / l2, l1, l2};
    }
    case ModelVariant::kHierarchy: {
      const double root = phi[0], kappa = phi[1], l2 = phi[2] - phi[1];
      const double l1 = l2 + kappa / root;
      return {(kappa + l2) / l1, 0.0, l1, l2};
    }
    case ModelVariant::kEqualRates: {
      const double root = phi[0], kappa = phi[1], l = phi[2];
      const double beta = kappa * root / l;
      return {1.0 + beta - kappa / l, beta, l, l};
    }
    case ModelVariant::kHierarchyEqual:
      return {1.0 - phi[0] / phi[1], 0.0, phi[1], phi[1]};
  }
  return {};
}

/// Structural coordinates (mu*, kappa) when both rates are pinned and only
/// (alpha, beta) move; the density factor reduces to kappa.
inline std::optional<Structural> to_structural_known_rates(const std::array<double, kNumParams>& t) {
  auto full = to_structural(t, ModelVariant::kFull);
  if (!full) return std::nullopt;
  Structural s;
  s.phi = {full->phi[0], full->phi[1], 0.0, 0.0};
  s.dim = 2;
  s.log_factor = std::log(full->phi[1]);
  return s;
}

inline std::array<double, kNumParams> from_structural_known_rates(const std::array<double, kNumParams>& phi, double l1,
                                                                  double l2) {
  const double root = phi[0], kappa = phi[1], a = l2 - l1;
  const double b = -kappa - 2.0 * a * root, c = a * root * root + kappa * root;
  return {(b + l2 + c) / l1, c / l2, l1, l2};
}

/// Structural coordinates that must stay positive (reflected at zero).
inline bool structural_positive(std::size_t j, ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kFull:
      return j == 1;
    case ModelVariant::kHierarchy:
      return j <= 1;
    case ModelVariant::kEqualRates:
      return j == 1;
    case ModelVariant::kHierarchyEqual:
      return j == 0;
  }
  return false;
}

/// Likelihood power at iteration `it` of a burn-in of length `burn`.
inline double anneal_power(const ChainConfig& cfg, std::size_t it, std::size_t burn) {
  if (!cfg.anneal || it >= burn) return 1.0;
  const double frac = static_cast<double>(it) / (cfg.anneal_fraction * static_cast<double>(burn));
  if (frac >= 1.0) return 1.0;
  return std::pow(cfg.anneal_start, 1.0 - frac);
}

inline double adapt(double scale, bool accepted, double target, std::size_t iteration, double lo, double hi) {
  const double gain = std::pow(static_cast<double>(iteration) + 1.0, -0.6);
  return std::clamp(scale * std::exp(gain * ((accepted ? 1.0 : 0.0) - target)), lo, hi);
}

}  // namespace detail

/// One chain of the systematic sweep: each sampled parameter in the order
/// (alpha, beta, lambda1, lambda2), then every latent entry in time order.
/// Proposal scales adapt (Robbins-Monro) during the first half and are
/// frozen afterwards; only the second half is retained.
template <class Target>
ChainResult run_chain(Target& target, ModelVariant variant, const ChainConfig& cfg, Rng& rng) {
  const Priors& priors = cfg.priors;
  ChainResult out;
  const std::size_t burn = cfg.burn_in();
  out.draws.reserve(cfg.retained());
  out.log_posterior.reserve(cfg.retained());

  auto lp_of = [&](const std::array<double, kNumParams>& v) {
    return log_prior(v[0], v[1], v[2], v[3], priors, variant);
  };
  auto make_params = [&](std::array<double, kNumParams> v) {
    if (!has_plasticity(variant)) v[1] = 0.0;
    if (has_equal_rates(variant)) v[3] = v[2];
    return v;
  };

  // Over-dispersed start: free components drawn from the prior.
  std::array<double, kNumParams> theta{};
  double loglik = kNegInf;
  for (int attempt = 0;; ++attempt) {
    for (std::size_t i = 0; i < kNumParams; ++i) {
      const auto r = priors.range(i);
      theta[i] = cfg.fixed[i] ? *cfg.fixed[i] : cfg.initial ? (*cfg.initial)[i] : uniform(rng, r.lower, r.upper);
      if (i >= 2 && theta[i] <= 0.0) theta[i] = 0.5 * r.upper;
    }
    theta = make_params(theta);
    const double lp = lp_of(theta);
    if (lp == kNegInf) throw ValidationError("pinned parameter values lie outside the prior support");
    const ModelParams p(theta[0], theta[1], theta[2], theta[3]);
    loglik = target.propose_params(p);
    if (cfg.prior_only || loglik != kNegInf || attempt == 999) {
      target.accept_params();
      break;
    }
  }
  if (cfg.prior_only) loglik = 0.0;
  double logprior = lp_of(theta);

  std::array<double, kNumParams> scales = cfg.proposal_scales;
  std::array<std::size_t, kNumParams> accepted{}, proposed{};
  const std::size_t n_latent = cfg.prior_only ? 0 : target.latent_count();
  std::vector<double> latent_scales(n_latent);
  for (std::size_t j = 0; j < n_latent; ++j) latent_scales[j] = target.latent_initial_scale(j);
  std::vector<double> latent_sum(target.latent_count(), 0.0);
  std::size_t latent_accepted = 0, latent_proposed = 0;
  // Structural moves change every sampled component: they need either no
  // pinned component or exactly the two rates pinned (with beta free).
  bool any_fixed = false;
  for (const auto& f : cfg.fixed) any_fixed = any_fixed || f.has_value();
  const bool known_rates = cfg.fixed[2] && cfg.fixed[3] && !cfg.fixed[0] && !cfg.fixed[1] && has_plasticity(variant);
  const bool structural = cfg.structural_moves && (!any_fixed || known_rates);
  auto to_phi = [&](const std::array<double, kNumParams>& t) {
    return known_rates ? detail::to_structural_known_rates(t) : detail::to_structural(t, variant);
  };
  auto from_phi = [&](const std::array<double, kNumParams>& phi) {
    return known_rates ? detail::from_structural_known_rates(phi, theta[2], theta[3])
                       : detail::from_structural(phi, variant);
  };
  auto phi_positive = [&](std::size_t j) { return known_rates ? j == 1 : detail::structural_positive(j, variant); };
  std::array<double, kNumParams> structural_scales;
  structural_scales.fill(cfg.structural_scale);
  std::size_t structural_accepted = 0, structural_proposed = 0;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const bool adapting = it < burn;
    const double power = detail::anneal_power(cfg, it, burn);
    for (std::size_t i = 0; i < kNumParams; ++i) {
      if (!is_sampled(i, variant, cfg)) continue;
      const auto range = priors.range(i);
      auto cand = theta;
      cand[i] = reflect(theta[i] + uniform(rng, -scales[i], scales[i]), range.lower, range.upper);
      cand = make_params(cand);
      const double lp = lp_of(cand);
      double ll = kNegInf;
      if (lp != kNegInf) {
        ll = cfg.prior_only ? 0.0 : target.propose_params(ModelParams(cand[0], cand[1], cand[2], cand[3]));
      }
      const bool ok = detail::accept_move(power * ll + lp, power * loglik + logprior, rng);
      if (ok) {
        theta = cand;
        loglik = ll;
        logprior = lp;
        if (!cfg.prior_only) target.accept_params();
      }
      if (adapting) {
        scales[i] = detail::adapt(scales[i], ok, cfg.target_acceptance, it, 1e-6 * range.width(), 0.5 * range.width());
      } else {
        ++proposed[i];
        accepted[i] += ok;
      }
    }
    for (std::size_t j = 0; structural && j < kNumParams; ++j) {
      const auto here = to_phi(theta);
      if (!here || j >= here->dim) break;
      auto phi = here->phi;
      phi[j] += uniform(rng, -structural_scales[j], structural_scales[j]);
      if (phi_positive(j)) phi[j] = std::abs(phi[j]);
      const auto cand = from_phi(phi);
      const auto there = to_phi(cand);
      double lp = kNegInf, ll = kNegInf;
      if (there) lp = lp_of(cand);
      if (lp != kNegInf) {
        ll = cfg.prior_only ? 0.0 : target.propose_params(ModelParams(cand[0], cand[1], cand[2], cand[3]));
      }
      const double proposed_lp = there ? power * ll + lp + there->log_factor : kNegInf;
      const bool ok = detail::accept_move(proposed_lp, power * loglik + logprior + here->log_factor, rng);
      if (ok) {
        theta = cand;
        loglik = ll;
        logprior = lp;
        if (!cfg.prior_only) target.accept_params();
      }
      if (adapting) {
        structural_scales[j] = detail::adapt(structural_scales[j], ok, cfg.target_acceptance, it, 1e-9, 0.5);
      } else {
        ++structural_proposed;
        structural_accepted += ok;
      }
    }
    for (std::size_t j = 0; j < n_latent; ++j) {
      const double cur = target.latent_value(j);
      const double lo = target.latent_lower(j), hi = target.latent_upper(j);
      const double cand = reflect(cur + uniform(rng, -latent_scales[j], latent_scales[j]), lo, hi);
      double ll = kNegInf;
      if (cand >= lo && cand <= hi) ll = target.propose_latent(j, cand);
      const bool ok = detail::accept_move(ll, loglik, rng);
      if (ok) {
        target.accept_latent();
        loglik = target.loglik();
      }
      if (adapting) {
        latent_scales[j] =
            detail::adapt(latent_scales[j], ok, cfg.target_acceptance, it, 1e-12, target.latent_max_scale(j));
      } else {
        ++latent_proposed;
        latent_accepted += ok;
      }
    }
    if (cfg.audit_interval != 0 && !cfg.prior_only && (it + 1) % cfg.audit_interval == 0) {
      out.max_drift = std::max(out.max_drift, std::abs(target.recompute() - target.loglik()));
    }
    if (!adapting) {
      out.draws.push_back(theta);
      out.log_posterior.push_back(loglik + logprior);
      for (std::size_t j = 0; j < latent_sum.size(); ++j) latent_sum[j] += target.latent_value(j);
    }
  }

  for (std::size_t i = 0; i < kNumParams; ++i) {
    out.acceptance[i] = proposed[i] ? static_cast<double>(accepted[i]) / static_cast<double>(proposed[i])
                                    : std::numeric_limits<double>::quiet_NaN();
  }
  if (structural_proposed) out.structural_acceptance = static_cast<double>(structural_accepted) / structural_proposed;
  if (latent_proposed) out.latent_acceptance = static_cast<double>(latent_accepted) / latent_proposed;
  out.final_scales = scales;
  out.latent_mean.resize(latent_sum.size());
  for (std::size_t j = 0; j < latent_sum.size(); ++j) {
    out.latent_mean[j] = latent_sum[j] / static_cast<double>(cfg.retained());
  }
  return out;
}

/// Pooled output of a multi-chain run.
struct ChainRun {
  ModelVariant variant = ModelVariant::kFull;
  std::vector<ChainResult> chains;
  std::optional<double> rhat;
  std::string rhat_error;
  bool converged = false;
  PosteriorSummary summary;
  /// Posterior mean of each latent entry (target index layout).
  std::vector<double> latent_mean;
  bool augmented = false;

  std::vector<std::array<double, kNumParams>> pooled() const {
    std::vector<std::array<double, kNumParams>> all;
    for (const auto& c : chains) all.insert(all.end(), c.draws.begin(), c.draws.end());
    return all;
  }

  /// Posterior-mean latent values of a summary-data run.
  AugmentedData latent_augmentation() const {
    AugmentedData aug;
    for (std::size_t i = 0; i + 1 < latent_mean.size(); i += 2) {
      aug.m_mis.push_back(latent_mean[i]);
      aug.v_mis.push_back(latent_mean[i + 1]);
    }
    return aug;
  }
};

/// MPSRF over the sampled components of a finished run.
inline void attach_diagnostics(ChainRun& run, const ChainConfig& cfg) {
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (is_sampled(i, run.variant, cfg)) dims.push_back(i);
  }
  std::optional<double> rhat;
  if (!dims.empty()) {
    std::vector<ChainDraws> draws;
    for (const auto& c : run.chains) {
      ChainDraws d;
      d.reserve(c.draws.size());
      for (const auto& row : c.draws) {
        std::vector<double> x;
        for (auto i : dims) x.push_back(row[i]);
        d.push_back(std::move(x));
      }
      draws.push_back(std::move(d));
    }
    try {
      rhat = mpsrf(draws);
    } catch (const std::exception& e) {
      run.rhat_error = e.what();
    }
  }
  run.rhat = rhat;
  run.converged = rhat.has_value() && *rhat < cfg.rhat_threshold;
  run.summary = summarize(run.pooled(), rhat);
}

template <class MakeTarget>
ChainRun run_chains_with(MakeTarget&& make_target, ModelVariant variant, const ChainConfig& cfg) {
  cfg.validate();
  ChainRun run;
  run.variant = variant;
  run.chains.resize(cfg.chains);
  std::vector<std::vector<double>> latent(cfg.chains);
  parallel_for(
      cfg.chains,
      [&](std::size_t c) {
        auto target = make_target();
        Rng rng = make_stream(cfg.seed, c);
        run.chains[c] = run_chain(target, variant, cfg, rng);
        run.augmented = target.augmented();
      },
      cfg.max_threads);
  const std::size_t n_latent = run.chains.front().latent_mean.size();
  run.latent_mean.assign(n_latent, 0.0);
  for (const auto& c : run.chains) {
    for (std::size_t j = 0; j < n_latent; ++j) run.latent_mean[j] += c.latent_mean[j] / cfg.chains;
  }
  attach_diagnostics(run, cfg);
  return run;
}

/// Posterior sampling for summary data under one model variant.
inline ChainRun run_chains(const SummarySeries& data, ModelVariant variant, const ChainConfig& cfg) {
  data.validate();
  const bool augment = needs_augmentation(data.times, cfg.augmentation);
  return run_chains_with([&] { return SummaryTarget(data, augment); }, variant, cfg);
}

/// Posterior sampling for per-trajectory data.
inline ChainRun run_chains_trajectory(const TrajectorySeries& data, ModelVariant variant, const ChainConfig& cfg) {
  data.validate();
  const bool augment = needs_augmentation(data.times, cfg.augmentation);
  return run_chains_with([&] { return TrajectoryTarget(data, augment); }, variant, cfg);
}

}  // namespace plasticity
