#pragma once

// Deviance information criterion and ranking of the four model variants.

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
#include "likelihood.hpp"
#include "random.hpp"
#include "sampler.hpp"

namespace plasticity {

struct DicResult {
  double dic = 0.0;
  double p_d = 0.0;
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
  /// Half the variance of the deviance; reported alongside pD, which can
  /// turn negative when the posterior is curved and its mean fits poorly.
  double p_v = 0.0;
  std::array<double, kNumParams> theta_mean{};
};

/// DIC = Dbar + pD with pD = Dbar - D(theta_bar), D = -2 loglik. `loglik`
/// maps a parameter array to a log-likelihood.
template <class LogLik>
DicResult dic_from(const std::vector<std::array<double, kNumParams>>& samples, LogLik&& loglik) {
  if (samples.size() < 100) throw std::invalid_argument("DIC needs at least 100 retained samples");
  DicResult r;
  std::vector<double> deviance;
  deviance.reserve(samples.size());
  for (const auto& s : samples) {
    const double d = -2.0 * loglik(s);
    if (!std::isfinite(d)) throw std::runtime_error("DIC: non-finite deviance at a retained sample");
    deviance.push_back(d);
  }
  double sum = 0.0;
  for (double d : deviance) sum += d;
  // Same origin-shifted mean as summarize(), so a constant sample gives
  // theta_bar equal to that sample exactly.
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const double origin = samples.front()[i];
    double acc = 0.0;
    for (const auto& s : samples) acc += s[i] - origin;
    r.theta_mean[i] = origin + acc / static_cast<double>(samples.size());
  }
  r.mean_deviance = sum / static_cast<double>(samples.size());
  double ss = 0.0;
  for (double d : deviance) ss += (d - r.mean_deviance) * (d - r.mean_deviance);
  r.p_v = 0.5 * ss / static_cast<double>(samples.size() > 1 ? samples.size() - 1 : 1);
  r.deviance_at_mean = -2.0 * loglik(r.theta_mean);
  if (!std::isfinite(r.deviance_at_mean)) throw std::runtime_error("DIC: non-finite deviance at the posterior mean");
  r.p_d = r.mean_deviance - r.deviance_at_mean;
  r.dic = r.mean_deviance + r.p_d;
  return r;
}

/// DIC for summary data with the latent values held at `aug`.
inline DicResult dic(const std::vector<std::array<double, kNumParams>>& samples, const SummarySeries& data,
                     const AugmentedData& aug) {
  return dic_from(samples, [&](const std::array<double, kNumParams>& t) {
    return loglik_summary(data, aug, ModelParams(t[0], t[1], t[2], t[3]));
  });
}

inline DicResult dic_trajectory(const std::vector<std::array<double, kNumParams>>& samples,
                                const TrajectorySeries& data, const std::vector<std::vector<double>>& latent) {
  return dic_from(samples, [&](const std::array<double, kNumParams>& t) {
    return loglik_trajectory(data, latent, ModelParams(t[0], t[1], t[2], t[3]));
  });
}

struct FitResult {
  ModelVariant variant = ModelVariant::kFull;
  PosteriorSummary summary;
  double dic = std::numeric_limits<double>::quiet_NaN();
  double p_d = std::numeric_limits<double>::quiet_NaN();
  double p_v = std::numeric_limits<double>::quiet_NaN();
  double loglik_at_mean = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  /// 1 for the winner; 0 when excluded from the ranking.
  std::size_t rank = 0;
  std::string note;
};

/// Fits one variant and scores it.
inline FitResult fit_variant(const SummarySeries& data, ModelVariant variant, const ChainConfig& cfg) {
  FitResult fit;
  fit.variant = variant;
  const ChainRun run = run_chains(data, variant, cfg);
  fit.summary = run.summary;
  fit.converged = run.converged;
  if (!run.rhat_error.empty()) fit.note = run.rhat_error;
  try {
    const auto d = dic(run.pooled(), data, run.latent_augmentation());
    fit.dic = d.dic;
    fit.p_d = d.p_d;
    fit.p_v = d.p_v;
    fit.loglik_at_mean = -0.5 * d.deviance_at_mean;
  } catch (const std::exception& e) {
    fit.converged = false;
    fit.note = e.what();
  }
  if (!fit.converged && fit.note.empty()) {
    fit.note = "not converged (R = " + (run.rhat ? std::to_string(*run.rhat) : std::string("n/a")) + ")";
  }
  return fit;
}

/// Orders fits: converged ones by ascending DIC (ranks 1, 2, ...), then the
/// excluded ones in their original order.
inline void rank_fits(std::vector<FitResult>& fits) {
  std::stable_sort(fits.begin(), fits.end(), [](const FitResult& a, const FitResult& b) {
    if (a.converged != b.converged) return a.converged;
    if (!a.converged) return false;
    return a.dic < b.dic;
  });
  std::size_t rank = 0;
  for (auto& f : fits) f.rank = f.converged ? ++rank : 0;
}

/// Fits all four variants (variant v uses stream v of cfg.seed) and ranks them.
inline std::vector<FitResult> select_model(const SummarySeries& data, const ChainConfig& cfg) {
  data.validate();
  std::vector<FitResult> fits;
  for (std::size_t v = 0; v < std::size(kAllVariants); ++v) {
    ChainConfig c = cfg;
    c.seed = stream_seed(cfg.seed, v);
    fits.push_back(fit_variant(data, kAllVariants[v], c));
  }
  rank_fits(fits);
  return fits;
}

}  // namespace plasticity
