#pragma once

// Convergence diagnostics and posterior summaries.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "core.hpp"

namespace plasticity {

/// Draws of one chain; draws[t][d] is dimension d at iteration t.
using ChainDraws = std::vector<std::vector<double>>;

/// Multivariate potential scale reduction factor (Brooks & Gelman):
///
///   R = (n - 1) / n + (m + 1) / m * lambda_max,
///
/// with m chains of n draws, W the mean within-chain covariance, B/n the
/// covariance of the chain means, and lambda_max the largest eigenvalue of
/// W^-1 B / n. Throws if W is singular (typically a constant component or a
/// run that is far too short).
inline double mpsrf(const std::vector<ChainDraws>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw std::invalid_argument("mpsrf needs at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 10) throw std::invalid_argument("mpsrf needs at least 10 draws per chain");
  const std::size_t dim = chains.front().front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw std::invalid_argument("mpsrf: chains must have equal length");
  }

  Eigen::MatrixXd means(m, dim);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t c = 0; c < m; ++c) {
    Eigen::MatrixXd x(n, dim);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t d = 0; d < dim; ++d) x(t, d) = chains[c][t][d];
    }
    Eigen::RowVectorXd mean = x.colwise().mean();
    means.row(c) = mean;
    Eigen::MatrixXd centered = x.rowwise() - mean;
    within += centered.transpose() * centered / static_cast<double>(n - 1);
  }
  within /= static_cast<double>(m);
  Eigen::MatrixXd centered_means = means.rowwise() - means.colwise().mean();
  Eigen::MatrixXd between_over_n = centered_means.transpose() * centered_means / static_cast<double>(m - 1);

  Eigen::LLT<Eigen::MatrixXd> llt(within);
  const double scale = within.diagonal().cwiseAbs().maxCoeff();
  if (llt.info() != Eigen::Success || !(scale > 0.0) ||
      within.diagonal().minCoeff() <= 1e-14 * scale) {
    throw std::runtime_error("mpsrf: within-chain covariance is singular; run longer chains");
  }
  // Eigenvalues of W^-1 B/n equal those of L^-1 (B/n) L^-T with W = L L^T.
  Eigen::MatrixXd l_inv_b = llt.matrixL().solve(between_over_n);
  Eigen::MatrixXd sym = llt.matrixL().solve(l_inv_b.transpose()).transpose();
  sym = 0.5 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  const double lambda_max = std::max(0.0, eig.eigenvalues().maxCoeff());
  const double nd = static_cast<double>(n), md = static_cast<double>(m);
  return (nd - 1.0) / nd + (md + 1.0) / md * lambda_max;
}

/// Empirical quantile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> sample, double q) {
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, q);
}

struct PosteriorSummary {
  std::array<double, kNumParams> point{};
  std::array<Interval, kNumParams> interval{};
  std::optional<double> rhat;
  std::size_t samples_kept = 0;
};

/// Posterior mean and central 95% interval per parameter from pooled draws
/// (samples[t][i], i over the four parameters).
inline PosteriorSummary summarize(const std::vector<std::array<double, kNumParams>>& samples,
                                  std::optional<double> rhat = std::nullopt) {
  if (samples.size() < 100) throw std::invalid_argument("summarize needs at least 100 retained samples");
  PosteriorSummary s;
  s.samples_kept = samples.size();
  s.rhat = rhat;
  std::vector<double> column(samples.size());
  for (std::size_t i = 0; i < kNumParams; ++i) {
    // Accumulate deviations from the first draw so a constant sample averages exactly.
    const double origin = samples.front()[i];
    double sum = 0.0;
    for (std::size_t t = 0; t < samples.size(); ++t) {
      column[t] = samples[t][i];
      sum += column[t] - origin;
    }
    std::sort(column.begin(), column.end());
    s.point[i] = origin + sum / static_cast<double>(samples.size());
    s.interval[i] = {quantile_sorted(column, 0.025), quantile_sorted(column, 0.975)};
  }
  return s;
}

}  // namespace plasticity
