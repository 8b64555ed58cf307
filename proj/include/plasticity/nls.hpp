#pragma once

// Nonlinear least-squares baseline: RK4 moment curves fitted to the observed
// means and variances by multistart Nelder-Mead inside the prior box.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "dynamics.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace plasticity {

enum class NlsObjective {
  kNls1,  // squared residuals of means and variances
  kNls2,  // squared residuals of means and standard deviations
};

struct NlsConfig {
  std::size_t multistart = 20;
  std::size_t max_evaluations = 3000;
  /// Stop when the simplex function values spread less than this fraction
  /// of the best value.
  double tolerance = 1e-10;
  /// Fresh simplices started from each optimum found.
  std::size_t restarts = 2;
  /// RK4 sub-step used for the predicted curves.
  double rk4_step = 0.05;
  std::uint64_t seed = 1;
  Priors priors;
  unsigned max_threads = 1;
};

/// Objective at theta; the prediction starts from the first observation.
inline double nls_objective(const SummarySeries& data, const ModelParams& p, NlsObjective objective,
                            double rk4_step = 0.05) {
  const auto pred = rk4_solve(p, data.means.front(), data.variances.front(), data.n0, data.times, rk4_step);
  double total = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double dm = data.means[k] - pred[k].mu;
    double dv;
    if (objective == NlsObjective::kNls1) {
      dv = data.variances[k] - pred[k].sigma2;
    } else {
      dv = std::sqrt(data.variances[k]) - std::sqrt(std::max(pred[k].sigma2, 0.0));
    }
    total += dm * dm + dv * dv;
  }
  return std::isfinite(total) ? total : std::numeric_limits<double>::infinity();
}

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  double initial_value = 0.0;
  std::size_t evaluations = 0;
};

/// Absolute spread below which a simplex counts as collapsed.
inline constexpr double kNelderMeadFloor = 1e-22;

/// Box-constrained Nelder-Mead: trial points are clamped into [lo, hi].
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                    std::vector<double> start, const std::vector<double>& lo,
                                    const std::vector<double>& hi, std::size_t max_evaluations, double tolerance) {
  const std::size_t dim = start.size();
  auto clamp_in = [&](std::vector<double>& x) {
    for (std::size_t i = 0; i < dim; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  };
  clamp_in(start);
  NelderMeadResult out;
  std::vector<std::vector<double>> simplex{start};
  for (std::size_t i = 0; i < dim; ++i) {
    auto v = start;
    const double step = 0.1 * (hi[i] - lo[i]);
    v[i] = (v[i] + step <= hi[i]) ? v[i] + step : v[i] - step;
    simplex.push_back(v);
  }
  std::vector<double> values;
  for (const auto& v : simplex) values.push_back(f(v));
  out.evaluations = simplex.size();
  out.initial_value = values.front();

  std::vector<std::size_t> order(dim + 1);
  while (out.evaluations < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[dim - 1];
    if (std::abs(values[worst] - values[best]) <= tolerance * std::abs(values[best]) + kNelderMeadFloor) break;

    std::vector<double> centroid(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
      for (std::size_t i = 0; i < dim; ++i) centroid[i] += simplex[order[j]][i] / static_cast<double>(dim);
    }
    auto along = [&](double t) {
      std::vector<double> x(dim);
      for (std::size_t i = 0; i < dim; ++i) x[i] = centroid[i] + t * (simplex[worst][i] - centroid[i]);
      clamp_in(x);
      return x;
    };
    auto reflected = along(-1.0);
    const double fr = f(reflected);
    ++out.evaluations;
    if (fr < values[best]) {
      auto expanded = along(-2.0);
      const double fe = f(expanded);
      ++out.evaluations;
      if (fe < fr) {
        simplex[worst] = std::move(expanded);
        values[worst] = fe;
      } else {
        simplex[worst] = std::move(reflected);
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = std::move(reflected);
      values[worst] = fr;
      continue;
    }
    auto contracted = (fr < values[worst]) ? along(-0.5) : along(0.5);
    const double fc = f(contracted);
    ++out.evaluations;
    if (fc < std::min(fr, values[worst])) {
      simplex[worst] = std::move(contracted);
      values[worst] = fc;
      continue;
    }
    for (std::size_t j = 1; j <= dim; ++j) {
      auto& v = simplex[order[j]];
      for (std::size_t i = 0; i < dim; ++i) v[i] = simplex[best][i] + 0.5 * (v[i] - simplex[best][i]);
      values[order[j]] = f(v);
      ++out.evaluations;
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  out.x = simplex[best];
  out.value = values[best];
  return out;
}

struct NlsFit {
  std::array<double, kNumParams> theta{};
  double objective = 0.0;
  std::size_t starts_improved = 0;
};

/// Multistart fit over the full four-parameter box; start s is drawn from
/// stream s of cfg.seed. Throws if no start improves on its initial point.
inline NlsFit nls_fit(const SummarySeries& data, NlsObjective objective, const NlsConfig& cfg = {}) {
  data.validate();
  if (cfg.multistart < 1) throw ValidationError("multistart must be at least 1");
  const auto& pr = cfg.priors;
  // Rates are kept off zero, where the population constraint degenerates.
  const std::vector<double> lo{pr.alpha_range.lower, pr.beta_range.lower, 1e-6, 1e-6};
  const std::vector<double> hi{pr.alpha_range.upper, pr.beta_range.upper, pr.lambda_range.upper,
                               pr.lambda_range.upper};
  auto f = [&](const std::vector<double>& x) {
    if (!ModelParams::in_bounds(x[0], x[1], x[2], x[3])) return std::numeric_limits<double>::infinity();
    return nls_objective(data, ModelParams(x[0], x[1], x[2], x[3]), objective, cfg.rk4_step);
  };
  std::vector<NelderMeadResult> results(cfg.multistart);
  parallel_for(
      cfg.multistart,
      [&](std::size_t s) {
        Rng rng = make_stream(cfg.seed, s);
        std::vector<double> start(kNumParams);
        for (std::size_t i = 0; i < kNumParams; ++i) start[i] = uniform(rng, lo[i], hi[i]);
        auto r = nelder_mead(f, start, lo, hi, cfg.max_evaluations, cfg.tolerance);
        for (std::size_t k = 0; k < cfg.restarts; ++k) {
          auto again = nelder_mead(f, r.x, lo, hi, cfg.max_evaluations, cfg.tolerance);
          if (!(again.value < r.value)) break;
          again.initial_value = r.initial_value;
          again.evaluations += r.evaluations;
          r = std::move(again);
        }
        results[s] = std::move(r);
      },
      cfg.max_threads);
  NlsFit fit;
  fit.objective = std::numeric_limits<double>::infinity();
  for (const auto& r : results) {
    if (r.value < r.initial_value) ++fit.starts_improved;
    if (r.value < fit.objective) {
      fit.objective = r.value;
      std::copy(r.x.begin(), r.x.end(), fit.theta.begin());
    }
  }
  if (fit.starts_improved == 0) throw std::runtime_error("NLS: no start improved on its initial point");
  return fit;
}

}  // namespace plasticity
