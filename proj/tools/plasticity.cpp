// Command-line front end: simulate, infer, select, benchmark, dynamics.
//
// Exit status: 0 success, 2 invalid input or configuration, 3 a fit did
// not converge (outputs are still written), 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "plasticity/core.hpp"
#include "plasticity/dynamics.hpp"
#include "plasticity/io.hpp"
#include "plasticity/sampler.hpp"
#include "plasticity/selection.hpp"
#include "plasticity/simulation.hpp"
#include "plasticity/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plasticity;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNotConverged = 3;

class NotConverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flag values; unset optionals fall back to the config file, then defaults.
struct Flags {
  std::string config;
  std::optional<std::string> data, out, model, augmentation, method;
  std::optional<std::uint64_t> seed;
  std::optional<int> study, n;
  std::optional<std::size_t> iterations, chains, replicates;
  std::optional<double> n0, m0, v0, t_end, step;
  std::vector<double> params;
  bool trajectories = false;
};

/// Fully resolved settings of one command; echoed into every output bundle.
struct RunConfig {
  json j;

  template <class T>
  T get(const char* key, T fallback) const {
    return j.contains(key) && !j[key].is_null() ? j[key].get<T>() : fallback;
  }
};

template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

RunConfig resolve(const Flags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw ValidationError("config file not found: " + f.config);
    try {
      j = json::parse(read_file(f.config));
    } catch (const json::parse_error& e) {
      throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
  }
  put(j, "data", f.data);
  put(j, "out", f.out);
  put(j, "model", f.model);
  put(j, "augmentation", f.augmentation);
  put(j, "method", f.method);
  put(j, "seed", f.seed);
  put(j, "study", f.study);
  put(j, "n", f.n);
  put(j, "iterations", f.iterations);
  put(j, "chains", f.chains);
  put(j, "replicates", f.replicates);
  put(j, "n0", f.n0);
  put(j, "m0", f.m0);
  put(j, "v0", f.v0);
  put(j, "t_end", f.t_end);
  put(j, "step", f.step);
  if (!f.params.empty()) {
    if (f.params.size() != kNumParams) throw ValidationError("--params needs four values: alpha,beta,lambda1,lambda2");
    j["params"] = f.params;
  }
  if (f.trajectories) j["trajectories"] = true;
  if (!j.contains("seed")) j["seed"] = 1;
  if (!j.contains("out")) j["out"] = "out";
  return {j};
}

Augmentation parse_augmentation(const std::string& s) {
  if (s == "auto") return Augmentation::kAuto;
  if (s == "on") return Augmentation::kOn;
  if (s == "off") return Augmentation::kOff;
  throw ValidationError("augmentation must be auto, on or off");
}

ChainConfig chain_config(const RunConfig& rc) {
  ChainConfig c;
  c.seed = rc.get<std::uint64_t>("seed", 1);
  c.iterations = rc.get<std::size_t>("iterations", c.iterations);
  c.chains = rc.get<std::size_t>("chains", c.chains);
  c.rhat_threshold = rc.get<double>("rhat_threshold", c.rhat_threshold);
  c.target_acceptance = rc.get<double>("target_acceptance", c.target_acceptance);
  c.augmentation = parse_augmentation(rc.get<std::string>("augmentation", "auto"));
  c.audit_interval = rc.get<std::size_t>("audit_interval", 0);
  c.validate();
  return c;
}

ModelParams params_of(const RunConfig& rc) {
  if (!rc.j.contains("params")) throw ValidationError("parameters required (--params alpha,beta,lambda1,lambda2)");
  const auto p = rc.j["params"].get<std::vector<double>>();
  if (p.size() != kNumParams) throw ValidationError("params needs four values");
  return ModelParams(p[0], p[1], p[2], p[3]);
}

fs::path out_dir(const RunConfig& rc) { return rc.get<std::string>("out", "out"); }

fs::path data_path(const RunConfig& rc) {
  const auto path = rc.get<std::string>("data", "");
  if (path.empty()) throw ValidationError("--data is required");
  if (!fs::exists(path)) throw ValidationError("data file not found: " + path);
  return path;
}

// The output location is left out so that a bundle's bytes depend only on
// the inputs that determine its content.
json bundle_header(const RunConfig& rc, const char* command) {
  json config = rc.j;
  config.erase("out");
  json j = provenance(rc.get<std::uint64_t>("seed", 1), config);
  j["command"] = command;
  j["config"] = config;
  return j;
}

int cmd_simulate(const RunConfig& rc) {
  const fs::path out = out_dir(rc);
  json meta = bundle_header(rc, "simulate");
  if (rc.j.contains("study")) {
    StudyConfig sc;
    sc.study = rc.get<int>("study", 1);
    sc.replicates = rc.get<std::size_t>("replicates", sc.replicates);
    sc.seed = rc.get<std::uint64_t>("seed", 1);
    sc.n = rc.get<int>("n", sc.n);
    sc.n0 = rc.get<double>("n0", sc.n0);
    sc.growth_cap = rc.get<double>("growth_cap", sc.growth_cap);
    sc.validate();
    json reps = json::array();
    for (std::size_t r = 0; r < sc.replicates; ++r) {
      const auto ds = sc.study == 1 ? make_study1_dataset(sc, r) : make_exact_dataset(sc, r, sc.n0, 0);
      char name[32];
      std::snprintf(name, sizeof name, "data_%03zu.csv", r + 1);
      write_summary_csv(out / name, ds.data);
      reps.push_back({{"file", name},
                      {"alpha", ds.truth[0]},
                      {"beta", ds.truth[1]},
                      {"lambda1", ds.truth[2]},
                      {"lambda2", ds.truth[3]},
                      {"m0", ds.m0},
                      {"v0", ds.v0},
                      {"redraws", ds.redraws}});
    }
    meta["replicates"] = reps;
    meta["n"] = sc.n;
    meta["n0"] = sc.n0;
  } else {
    const ModelParams p = params_of(rc);
    const int n = rc.get<int>("n", 5);
    const double n0 = rc.get<double>("n0", 1000.0);
    const double m0 = rc.get<double>("m0", 0.5);
    const auto grid = uniform_grid(0.0, rc.get<double>("t_end", 24.0), rc.get<double>("step", 2.0));
    const auto method = rc.get<std::string>("method", "gillespie");
    if (method == "gillespie") {
      SimConfig sim;
      sim.n0 = static_cast<std::uint64_t>(std::llround(n0));
      sim.mu0 = m0;
      sim.t_end = grid.back();
      sim.record_grid = grid;
      sim.seed = rc.get<std::uint64_t>("seed", 1);
      sim.method = SimMethod::kUniformized;
      sim.max_population = rc.get<std::uint64_t>("max_population", 0);
      sim.validate();
      write_summary_csv(out / "data.csv", synthesize_summary_gillespie(sim, p, n));
      if (rc.get<bool>("trajectories", false)) {
        // Same seed, so these are the trajectories behind data.csv.
        write_atomic(out / "trajectories.csv", format_trajectory_csv(synthesize_trajectories_gillespie(sim, p, n)));
      }
    } else if (method == "conditional") {
      Rng rng = make_stream(rc.get<std::uint64_t>("seed", 1), 0);
      write_summary_csv(out / "data.csv",
                        synthesize_summary_conditional(p, m0, rc.get<double>("v0", 0.005), grid, n, n0, rng));
    } else {
      throw ValidationError("method must be gillespie or conditional");
    }
    meta["n"] = n;
    meta["n0"] = n0;
  }
  write_atomic(out / "metadata.json", meta.dump(2) + "\n");
  return kExitOk;
}

int cmd_infer(const RunConfig& rc) {
  const fs::path data = data_path(rc);
  const ChainConfig cfg = chain_config(rc);
  const ModelVariant variant = parse_variant(rc.get<std::string>("model", "full"));
  const double n0 = rc.get<double>("n0", 1000.0);
  ChainRun run;
  if (rc.get<bool>("trajectories", false)) {
    run = run_chains_trajectory(ingest_trajectory_csv(data, n0), variant, cfg);
  } else {
    run = run_chains(ingest_summary_csv(data, rc.get<int>("n", 5), n0), variant, cfg);
  }
  const fs::path out = out_dir(rc);
  write_atomic(out / "samples.csv", format_samples_csv(run, cfg.iterations));
  json summary = bundle_header(rc, "infer");
  summary["result"] = run_json(run);
  write_atomic(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "R = " << (run.rhat ? fmt(*run.rhat) : std::string("n/a")) << (run.converged ? "" : " (not converged)")
            << "\n";
  for (std::size_t i = 0; i < kNumParams; ++i) {
    std::cout << kParamNames[i] << " " << fmt(run.summary.point[i]) << " [" << fmt(run.summary.interval[i].lower)
              << ", " << fmt(run.summary.interval[i].upper) << "]\n";
  }
  return run.converged ? kExitOk : kExitNotConverged;
}

int cmd_select(const RunConfig& rc) {
  const fs::path data = data_path(rc);
  const ChainConfig cfg = chain_config(rc);
  const auto series = ingest_summary_csv(data, rc.get<int>("n", 5), rc.get<double>("n0", 1000.0));
  const auto fits = select_model(series, cfg);
  const fs::path out = out_dir(rc);
  write_atomic(out / "selection.csv", format_selection_csv(fits));
  json j = bundle_header(rc, "select");
  json rows = json::array();
  bool all_converged = true;
  for (const auto& f : fits) {
    all_converged = all_converged && f.converged;
    json row = summary_json(f.summary);
    row["variant"] = std::string(to_string(f.variant));
    row["dic"] = f.dic;
    row["p_d"] = f.p_d;
    row["p_v"] = f.p_v;
    row["converged"] = f.converged;
    row["rank"] = f.rank;
    row["winner"] = f.rank == 1;
    if (!f.note.empty()) row["note"] = f.note;
    rows.push_back(row);
  }
  j["fits"] = rows;
  write_atomic(out / "selection.json", j.dump(2) + "\n");
  for (const auto& f : fits) {
    std::cout << (f.rank == 1 ? "* " : "  ") << to_string(f.variant) << " DIC " << fmt(f.dic)
              << (f.converged ? "" : " (excluded: " + f.note + ")") << "\n";
  }
  return all_converged ? kExitOk : kExitNotConverged;
}

int cmd_benchmark(const RunConfig& rc) {
  StudyConfig sc;
  sc.study = rc.get<int>("study", 1);
  sc.replicates = rc.get<std::size_t>("replicates", sc.replicates);
  sc.seed = rc.get<std::uint64_t>("seed", 1);
  sc.n = rc.get<int>("n", sc.n);
  sc.n0 = rc.get<double>("n0", sc.n0);
  sc.growth_cap = rc.get<double>("growth_cap", sc.growth_cap);
  if (rc.j.contains("n0_values")) sc.n0_values = rc.j["n0_values"].get<std::vector<double>>();
  sc.chain = chain_config(rc);
  sc.nls.multistart = rc.get<std::size_t>("multistart", sc.nls.multistart);
  sc.validate();
  const StudyResult result = run_simulation_study(sc);
  const fs::path out = out_dir(rc);
  json j = bundle_header(rc, "benchmark");
  json groups = json::array();
  for (const auto& g : result.groups) {
    const auto m = evaluate_ase_cr(g.rows);
    if (sc.study != 3) write_atomic(out / ("table_" + g.method + ".csv"), format_ase_cr_csv(m));
    std::size_t converged = 0;
    for (const auto& r : g.rows) converged += r.converged;
    json metrics = json::object();
    for (std::size_t i = 0; i < kNumParams; ++i) {
      metrics[kParamNames[i]] = {{"ase", m[i].ase}, {"cr", std::isnan(m[i].cr) ? json(nullptr) : json(m[i].cr)}};
    }
    groups.push_back({{"method", g.method}, {"n0", g.n0}, {"converged", converged}, {"metrics", metrics}});
  }
  if (sc.study == 3) write_atomic(out / "sweep.csv", format_sweep_csv(result.groups));
  j["groups"] = groups;
  write_atomic(out / "benchmark.json", j.dump(2) + "\n");
  std::cout << (sc.study == 3 ? format_sweep_csv(result.groups) : format_ase_cr_csv(evaluate_ase_cr(result.groups[0].rows)));
  return kExitOk;
}

int cmd_dynamics(const RunConfig& rc) {
  const ModelParams p = params_of(rc);
  const auto grid = uniform_grid(0.0, rc.get<double>("t_end", 24.0), rc.get<double>("step", 2.0 / 3.0));
  const auto sol = rk4_solve(p, rc.get<double>("m0", 0.5), rc.get<double>("v0", 0.0), rc.get<double>("n0", 1000.0), grid);
  std::string csv = "time,mu,sigma2,nt\n";
  for (const auto& s : sol) csv += fmt(s.t) + "," + fmt(s.mu) + "," + fmt(s.sigma2) + "," + fmt(s.nt) + "\n";
  write_atomic(out_dir(rc) / "moments.csv", csv);
  json meta = bundle_header(rc, "dynamics");
  meta["equilibrium"] = equilibrium_mu(p);
  write_atomic(out_dir(rc) / "metadata.json", meta.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference of stem-cell plasticity from proportion time series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON configuration file");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--seed", f.seed, "Master random seed");
  };
  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "Input CSV");
    sub->add_option("--n", f.n, "Trajectories per summary point");
    sub->add_option("--n0", f.n0, "Initial population size");
  };
  auto chain_flags = [&](CLI::App* sub) {
    sub->add_option("--iterations", f.iterations, "MCMC iterations per chain");
    sub->add_option("--chains", f.chains, "Number of chains");
    sub->add_option("--augmentation", f.augmentation, "Latent thirds: auto, on or off");
  };
  auto model_flag = [&](CLI::App* sub) {
    sub->add_option("--model", f.model, "full, equal-rates, hierarchy or hierarchy-equal");
  };

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic datasets");
  common(simulate);
  simulate->add_option("--study", f.study, "Study design 1, 2 or 3 (prior-drawn replicates)");
  simulate->add_option("--replicates", f.replicates, "Replicates of the study design");
  simulate->add_option("--params", f.params, "alpha,beta,lambda1,lambda2 for a single dataset")->delimiter(',');
  simulate->add_option("--n", f.n, "Trajectories");
  simulate->add_option("--n0", f.n0, "Initial population size");
  simulate->add_option("--m0", f.m0, "Initial stem-cell proportion");
  simulate->add_option("--v0", f.v0, "Initial variance (conditional method)");
  simulate->add_option("--t-end", f.t_end, "Observation window length, days");
  simulate->add_option("--step", f.step, "Observation spacing, days");
  simulate->add_option("--method", f.method, "gillespie or conditional");
  simulate->add_flag("--trajectories", f.trajectories, "Also write the individual trajectories");

  auto* infer = app.add_subcommand("infer", "Posterior sampling for one model");
  common(infer);
  data_flags(infer);
  chain_flags(infer);
  model_flag(infer);
  infer->add_flag("--trajectories", f.trajectories, "Data holds individual trajectories");

  auto* select = app.add_subcommand("select", "Fit all four models and rank them by DIC");
  common(select);
  data_flags(select);
  chain_flags(select);

  auto* benchmark = app.add_subcommand("benchmark", "Replicate simulation study with ASE and coverage");
  common(benchmark);
  chain_flags(benchmark);
  benchmark->add_option("--study", f.study, "Study 1, 2 or 3");
  benchmark->add_option("--replicates", f.replicates, "Replicates per cell");
  benchmark->add_option("--n", f.n, "Trajectories");
  benchmark->add_option("--n0", f.n0, "Initial population size (studies 1 and 2)");

  auto* dynamics = app.add_subcommand("dynamics", "Integrate the moment equations");
  common(dynamics);
  dynamics->add_option("--params", f.params, "alpha,beta,lambda1,lambda2")->delimiter(',');
  dynamics->add_option("--m0", f.m0, "Initial mean");
  dynamics->add_option("--v0", f.v0, "Initial variance");
  dynamics->add_option("--n0", f.n0, "Initial population size");
  dynamics->add_option("--t-end", f.t_end, "End time, days");
  dynamics->add_option("--step", f.step, "Output spacing, days");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    const RunConfig rc = resolve(f);
    if (simulate->parsed()) return cmd_simulate(rc);
    if (infer->parsed()) return cmd_infer(rc);
    if (select->parsed()) return cmd_select(rc);
    if (benchmark->parsed()) return cmd_benchmark(rc);
    if (dynamics->parsed()) return cmd_dynamics(rc);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const json::exception& e) {
    std::cerr << "error: bad configuration value: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
