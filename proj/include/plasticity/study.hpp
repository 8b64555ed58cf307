#pragma once

// Replicate simulation studies: synthetic datasets drawn from the prior,
// MCMC and least-squares fits, and the ASE / coverage summaries.
//
// Study 1: complete data on a 2/3-day grid, sampled step by step from the
//          model's own conditional law.
// Study 2: exact simulation observed every 2 days (two thirds missing per
//          interval), MCMC against both least-squares baselines.
// Study 3: Study 2 datasets over several initial population sizes, fitted
//          with unknown and with known division rates.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "diagnostics.hpp"
#include "dynamics.hpp"
#include "nls.hpp"
#include "random.hpp"
#include "sampler.hpp"
#include "simulation.hpp"

namespace plasticity {

/// One replicate's truth against one method's estimate.
struct BenchRow {
  std::array<double, kNumParams> truth{};
  std::array<double, kNumParams> estimate{};
  /// Empty for methods without interval estimates.
  std::optional<std::array<Interval, kNumParams>> intervals;
  std::array<bool, kNumParams> covered{};
  std::array<double, kNumParams> squared_error{};
  bool converged = true;
};

inline BenchRow make_bench_row(const std::array<double, kNumParams>& truth,
                               const std::array<double, kNumParams>& estimate,
                               std::optional<std::array<Interval, kNumParams>> intervals = std::nullopt) {
  BenchRow row;
  row.truth = truth;
  row.estimate = estimate;
  row.intervals = intervals;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const double e = estimate[i] - truth[i];
    row.squared_error[i] = e * e;
    row.covered[i] = intervals && (*intervals)[i].contains(truth[i]);
  }
  return row;
}

inline BenchRow make_bench_row(const std::array<double, kNumParams>& truth, const PosteriorSummary& s) {
  auto row = make_bench_row(truth, s.point, s.interval);
  return row;
}

struct AseCr {
  double ase = 0.0;
  /// NaN when the rows carry no intervals.
  double cr = std::numeric_limits<double>::quiet_NaN();
};

/// Per-parameter average squared error and interval coverage rate.
inline std::array<AseCr, kNumParams> evaluate_ase_cr(const std::vector<BenchRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("evaluate_ase_cr needs at least one row");
  std::array<AseCr, kNumParams> out{};
  const bool with_intervals = rows.front().intervals.has_value();
  for (std::size_t i = 0; i < kNumParams; ++i) {
    double se = 0.0, hits = 0.0;
    for (const auto& r : rows) {
      se += r.squared_error[i];
      hits += r.covered[i] ? 1.0 : 0.0;
    }
    out[i].ase = se / static_cast<double>(rows.size());
    if (with_intervals) out[i].cr = hits / static_cast<double>(rows.size());
  }
  return out;
}

struct StudyConfig {
  int study = 1;
  std::size_t replicates = 20;
  int n = 5;
  double n0 = 1000.0;
  /// Initial population sizes of Study 3.
  std::vector<double> n0_values{100.0, 200.0, 500.0, 1000.0, 2000.0};
  std::uint64_t seed = 1;
  ChainConfig chain;
  NlsConfig nls;
  /// Parameter sets whose expected growth N_T / N_0 over the observation
  /// window exceeds this are redrawn (exact simulation cost is linear in N_T).
  double growth_cap = 16384.0;
  /// Study 2: also fit both least-squares baselines.
  bool with_nls = true;
  /// Study 3: also fit with the rates pinned at their true values.
  bool with_known_lambdas = true;

  void validate() const {
    if (study < 1 || study > 3) throw ValidationError("study must be 1, 2 or 3");
    if (replicates < 1) throw ValidationError("replicates must be at least 1");
    if (n < 2) throw ValidationError("n must be at least 2");
    if (!(n0 >= 1.0)) throw ValidationError("n0 must be at least 1");
    if (n0_values.empty()) throw ValidationError("n0 list is empty");
    for (double v : n0_values) {
      if (!(v >= 1.0)) throw ValidationError("n0 values must be at least 1");
    }
    if (!(growth_cap > 1.0)) throw ValidationError("growth cap must exceed 1");
    chain.validate();
  }

  std::vector<double> grid() const { return uniform_grid(0.0, 24.0, study == 1 ? 2.0 / 3.0 : 2.0); }
};

struct StudyDataset {
  std::array<double, kNumParams> truth{};
  double m0 = 0.0;
  double v0 = 0.0;
  SummarySeries data;
  /// Prior draws rejected before this one was accepted.
  std::size_t redraws = 0;
};

namespace detail {

inline std::array<double, kNumParams> draw_prior(Rng& rng, const Priors& pr) {
  std::array<double, kNumParams> t{};
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const auto r = pr.range(i);
    t[i] = uniform(rng, r.lower, r.upper);
    if (i >= 2) {
      while (!(t[i] > 0.0)) t[i] = uniform(rng, r.lower, r.upper);
    }
  }
  return t;
}

inline double expected_growth(const ModelParams& p, double m0, double t_end) {
  const std::vector<double> grid{0.0, t_end};
  return rk4_solve(p, m0, 0.0, 1.0, grid, 0.05).back().nt;
}

}  // namespace detail

/// Replicate r of Study 1: theta and m0 ~ prior, v0 ~ Unif(0, 0.01).
/// Draws whose synthesis hits a non-positive step variance are redrawn.
inline StudyDataset make_study1_dataset(const StudyConfig& cfg, std::size_t r) {
  Rng rng = make_stream(cfg.seed, r);
  StudyDataset ds;
  const auto grid = cfg.grid();
  for (;; ++ds.redraws) {
    ds.truth = detail::draw_prior(rng, cfg.chain.priors);
    ds.m0 = uniform01(rng);
    ds.v0 = uniform(rng, 0.0, 0.01);
    const ModelParams p(ds.truth[0], ds.truth[1], ds.truth[2], ds.truth[3]);
    try {
      ds.data = synthesize_summary_conditional(p, ds.m0, ds.v0, grid, cfg.n, cfg.n0, rng);
      return ds;
    } catch (const SimulationError&) {
    }
    if (ds.redraws > 10000) throw SimulationError("could not draw a usable Study 1 parameter set");
  }
}

/// Prior draw of replicate r for the exact-simulation studies; the same draw
/// serves every initial population size.
inline StudyDataset draw_exact_truth(const StudyConfig& cfg, std::size_t r) {
  Rng rng = make_stream(cfg.seed, r);
  StudyDataset ds;
  for (;; ++ds.redraws) {
    ds.truth = detail::draw_prior(rng, cfg.chain.priors);
    ds.m0 = uniform01(rng);
    const ModelParams p(ds.truth[0], ds.truth[1], ds.truth[2], ds.truth[3]);
    if (detail::expected_growth(p, ds.m0, 24.0) <= cfg.growth_cap) return ds;
    if (ds.redraws > 100000) throw SimulationError("growth cap rejects every prior draw");
  }
}

/// Replicate r of Studies 2 and 3 at initial population n0.
inline StudyDataset make_exact_dataset(const StudyConfig& cfg, std::size_t r, double n0, std::size_t n0_index) {
  StudyDataset ds = draw_exact_truth(cfg, r);
  SimConfig sim;
  sim.n0 = static_cast<std::uint64_t>(std::llround(n0));
  sim.mu0 = ds.m0;
  sim.t_end = 24.0;
  sim.record_grid = cfg.grid();
  sim.seed = stream_seed(stream_seed(cfg.seed, r), 1 + n0_index);
  sim.method = SimMethod::kUniformized;
  // Guard against pathological draws; expected growth is already capped.
  sim.max_population = static_cast<std::uint64_t>(64.0 * cfg.growth_cap * n0);
  const ModelParams p(ds.truth[0], ds.truth[1], ds.truth[2], ds.truth[3]);
  ds.data = synthesize_summary_gillespie(sim, p, cfg.n, cfg.chain.max_threads);
  ds.m0 = sim.initial_x() / n0;
  return ds;
}

struct MethodRows {
  std::string method;
  double n0 = 0.0;
  std::vector<BenchRow> rows;
};

struct StudyResult {
  int study = 1;
  std::vector<StudyDataset> datasets;
  std::vector<MethodRows> groups;
};

namespace detail {

inline BenchRow fit_mcmc_row(const StudyDataset& ds, const ChainConfig& base, std::uint64_t seed,
                             bool known_lambdas) {
  ChainConfig c = base;
  c.seed = seed;
  if (known_lambdas) {
    c.fixed[2] = ds.truth[2];
    c.fixed[3] = ds.truth[3];
  }
  const ChainRun run = run_chains(ds.data, ModelVariant::kFull, c);
  auto row = make_bench_row(ds.truth, run.summary);
  row.converged = run.converged;
  return row;
}

inline BenchRow fit_nls_row(const StudyDataset& ds, NlsObjective objective, const NlsConfig& base,
                            std::uint64_t seed) {
  NlsConfig c = base;
  c.seed = seed;
  const auto fit = nls_fit(ds.data, objective, c);
  return make_bench_row(ds.truth, fit.theta);
}

}  // namespace detail

/// Fits replicate datasets at one initial population size. Replicate r uses
/// chain seed stream r of `seed`.
inline std::vector<BenchRow> fit_sweep_cell(const std::vector<StudyDataset>& datasets, const StudyConfig& cfg,
                                            std::uint64_t seed, bool known_lambdas) {
  std::vector<BenchRow> rows;
  for (std::size_t r = 0; r < datasets.size(); ++r) {
    rows.push_back(detail::fit_mcmc_row(datasets[r], cfg.chain, stream_seed(seed, r), known_lambdas));
  }
  return rows;
}

/// Study 3 sweep for one setting of the rates: one MethodRows per n0.
inline std::vector<MethodRows> run_n0_sweep(const StudyConfig& cfg, bool with_known_lambdas,
                                            std::vector<StudyDataset>* datasets_out = nullptr) {
  cfg.validate();
  std::vector<MethodRows> out;
  for (std::size_t j = 0; j < cfg.n0_values.size(); ++j) {
    const double n0 = cfg.n0_values[j];
    std::vector<StudyDataset> datasets;
    for (std::size_t r = 0; r < cfg.replicates; ++r) datasets.push_back(make_exact_dataset(cfg, r, n0, j));
    const std::uint64_t seed = stream_seed(cfg.seed ^ 0x5eedULL, j);
    out.push_back({with_known_lambdas ? "mcmc-known-rates" : "mcmc", n0,
                   fit_sweep_cell(datasets, cfg, seed, with_known_lambdas)});
    if (datasets_out) datasets_out->insert(datasets_out->end(), datasets.begin(), datasets.end());
  }
  return out;
}

/// Runs a whole study.
inline StudyResult run_simulation_study(const StudyConfig& cfg) {
  cfg.validate();
  StudyResult result;
  result.study = cfg.study;
  const std::uint64_t fit_seed = cfg.seed ^ 0x5eedULL;
  if (cfg.study == 1 || cfg.study == 2) {
    for (std::size_t r = 0; r < cfg.replicates; ++r) {
      result.datasets.push_back(cfg.study == 1 ? make_study1_dataset(cfg, r) : make_exact_dataset(cfg, r, cfg.n0, 0));
    }
    MethodRows mcmc{"mcmc", cfg.n0, fit_sweep_cell(result.datasets, cfg, stream_seed(fit_seed, 0), false)};
    result.groups.push_back(std::move(mcmc));
    if (cfg.study == 2 && cfg.with_nls) {
      MethodRows nls1{"nls1", cfg.n0, {}}, nls2{"nls2", cfg.n0, {}};
      for (std::size_t r = 0; r < cfg.replicates; ++r) {
        const auto seed = stream_seed(fit_seed ^ 0x9157ULL, r);
        nls1.rows.push_back(detail::fit_nls_row(result.datasets[r], NlsObjective::kNls1, cfg.nls, seed));
        nls2.rows.push_back(detail::fit_nls_row(result.datasets[r], NlsObjective::kNls2, cfg.nls, seed));
      }
      result.groups.push_back(std::move(nls1));
      result.groups.push_back(std::move(nls2));
    }
    return result;
  }
  // Study 3: the known-rate fits reuse the datasets of the unknown-rate fits.
  for (std::size_t j = 0; j < cfg.n0_values.size(); ++j) {
    const double n0 = cfg.n0_values[j];
    std::vector<StudyDataset> datasets;
    for (std::size_t r = 0; r < cfg.replicates; ++r) datasets.push_back(make_exact_dataset(cfg, r, n0, j));
    const std::uint64_t seed = stream_seed(fit_seed, j);
    result.groups.push_back({"mcmc", n0, fit_sweep_cell(datasets, cfg, seed, false)});
    if (cfg.with_known_lambdas) {
      result.groups.push_back({"mcmc-known-rates", n0, fit_sweep_cell(datasets, cfg, seed, true)});
    }
    result.datasets.insert(result.datasets.end(), datasets.begin(), datasets.end());
  }
  return result;
}

}  // namespace plasticity
