#pragma once

// CSV and JSON input/output. Floating-point values are written with 17
// significant digits so that a write/read cycle reproduces them exactly.
// Every file is written to a temporary sibling first and then renamed.

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "core.hpp"
#include "diagnostics.hpp"
#include "sampler.hpp"
#include "selection.hpp"
#include "study.hpp"

namespace plasticity {

inline constexpr const char* kToolVersion = "0.1.0";

class IngestError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// %.17g formatting.
inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(std::string_view field, std::size_t row, const char* column) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw IngestError("row " + std::to_string(row) + ": cannot parse " + column + " '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) throw IngestError("row " + std::to_string(row) + ": " + column + " is not finite");
  return value;
}

/// Header fields plus data rows (blank lines skipped); rows are numbered
/// from 1 after the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_numbers;
};

inline CsvTable parse_csv(std::string_view all) {
  CsvTable t;
  bool have_header = false;
  std::size_t row = 0;
  while (!all.empty()) {
    const auto nl = all.find('\n');
    const std::string_view line = trim(all.substr(0, nl));
    all = (nl == std::string_view::npos) ? std::string_view{} : all.substr(nl + 1);
    if (line.empty()) continue;
    if (!have_header) {
      for (auto f : split_commas(line)) t.header.emplace_back(f);
      have_header = true;
      continue;
    }
    ++row;
    std::vector<std::string> fields;
    for (auto f : split_commas(line)) fields.emplace_back(f);
    t.rows.push_back(std::move(fields));
    t.row_numbers.push_back(row);
  }
  if (!have_header) throw IngestError("empty file: no header and no data rows");
  if (t.rows.empty()) throw IngestError("no data rows");
  return t;
}

inline void check_time_order(const std::vector<double>& times, std::size_t k, std::size_t row) {
  if (k == 0) return;
  if (times[k] == times[k - 1]) throw IngestError("row " + std::to_string(row) + ": duplicate time");
  if (times[k] < times[k - 1]) throw IngestError("row " + std::to_string(row) + ": times are not increasing");
}

}  // namespace detail

/// Parses `time,mean,variance` CSV text; n and n0 come from the caller.
inline SummarySeries parse_summary_csv(std::string_view text, int n, double n0) {
  const auto t = detail::parse_csv(text);
  if (t.header != std::vector<std::string>{"time", "mean", "variance"}) {
    throw IngestError("header must be 'time,mean,variance'");
  }
  SummarySeries s;
  s.n = n;
  s.n0 = n0;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& f = t.rows[k];
    const std::size_t row = t.row_numbers[k];
    if (f.size() != 3) {
      throw IngestError("row " + std::to_string(row) + ": expected 3 fields, got " + std::to_string(f.size()));
    }
    const double time = detail::parse_number(f[0], row, "time");
    const double mean = detail::parse_number(f[1], row, "mean");
    const double var = detail::parse_number(f[2], row, "variance");
    if (mean < 0.0 || mean > 1.0) {
      throw IngestError("row " + std::to_string(row) + ": mean out of range [0, 1] (" + f[1] + ")");
    }
    if (var < 0.0) throw IngestError("row " + std::to_string(row) + ": negative variance (" + f[2] + ")");
    s.times.push_back(time);
    s.means.push_back(mean);
    s.variances.push_back(var);
    detail::check_time_order(s.times, k, row);
  }
  s.validate();
  return s;
}

inline SummarySeries ingest_summary_csv(const std::filesystem::path& path, int n, double n0) {
  return parse_summary_csv(read_file(path), n, n0);
}

inline std::string format_summary_csv(const SummarySeries& s) {
  std::string out = "time,mean,variance\n";
  for (std::size_t k = 0; k < s.times.size(); ++k) {
    out += fmt(s.times[k]) + "," + fmt(s.means[k]) + "," + fmt(s.variances[k]) + "\n";
  }
  return out;
}

inline void write_summary_csv(const std::filesystem::path& path, const SummarySeries& s) {
  write_atomic(path, format_summary_csv(s));
}

/// Parses `time,traj_1,...,traj_n` CSV text.
inline TrajectorySeries parse_trajectory_csv(std::string_view text, double n0) {
  const auto t = detail::parse_csv(text);
  if (t.header.size() < 2 || t.header[0] != "time") throw IngestError("header must be 'time,traj_1,...,traj_n'");
  for (std::size_t i = 1; i < t.header.size(); ++i) {
    if (t.header[i] != "traj_" + std::to_string(i)) {
      throw IngestError("header column " + std::to_string(i + 1) + " must be 'traj_" + std::to_string(i) + "'");
    }
  }
  TrajectorySeries ts;
  ts.n0 = n0;
  ts.r.assign(t.header.size() - 1, {});
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& f = t.rows[k];
    const std::size_t row = t.row_numbers[k];
    if (f.size() != t.header.size()) {
      throw IngestError("row " + std::to_string(row) + ": expected " + std::to_string(t.header.size()) +
                        " fields, got " + std::to_string(f.size()));
    }
    ts.times.push_back(detail::parse_number(f[0], row, "time"));
    detail::check_time_order(ts.times, k, row);
    for (std::size_t i = 1; i < f.size(); ++i) {
      const double x = detail::parse_number(f[i], row, "proportion");
      if (x < 0.0 || x > 1.0) {
        throw IngestError("row " + std::to_string(row) + ": proportion out of range [0, 1] in traj_" +
                          std::to_string(i));
      }
      ts.r[i - 1].push_back(x);
    }
  }
  ts.validate();
  return ts;
}

inline TrajectorySeries ingest_trajectory_csv(const std::filesystem::path& path, double n0) {
  return parse_trajectory_csv(read_file(path), n0);
}

inline std::string format_trajectory_csv(const TrajectorySeries& ts) {
  std::string out = "time";
  for (std::size_t i = 0; i < ts.r.size(); ++i) out += ",traj_" + std::to_string(i + 1);
  out += "\n";
  for (std::size_t k = 0; k < ts.times.size(); ++k) {
    out += fmt(ts.times[k]);
    for (const auto& traj : ts.r) out += "," + fmt(traj[k]);
    out += "\n";
  }
  return out;
}

/// Retained draws; `iteration` counts from 1 over the whole chain.
inline std::string format_samples_csv(const ChainRun& run, std::size_t iterations) {
  std::string out = "iteration,chain,alpha,beta,lambda1,lambda2,log_posterior\n";
  for (std::size_t c = 0; c < run.chains.size(); ++c) {
    const auto& ch = run.chains[c];
    const std::size_t first = iterations - ch.draws.size() + 1;
    for (std::size_t t = 0; t < ch.draws.size(); ++t) {
      out += std::to_string(first + t) + "," + std::to_string(c + 1);
      for (double x : ch.draws[t]) out += "," + fmt(x);
      out += "," + fmt(ch.log_posterior[t]) + "\n";
    }
  }
  return out;
}

/// Provenance block embedded in every output bundle.
inline nlohmann::json provenance(std::uint64_t seed, const nlohmann::json& config) {
  return {{"seed", seed}, {"config_hash", fnv1a_hex(config.dump())}, {"tool_version", kToolVersion}};
}

inline nlohmann::json summary_json(const PosteriorSummary& s) {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumParams; ++i) {
    params[kParamNames[i]] = {{"mean", s.point[i]}, {"lower", s.interval[i].lower}, {"upper", s.interval[i].upper}};
  }
  nlohmann::json j = {{"parameters", params}, {"samples_kept", s.samples_kept}};
  j["rhat"] = s.rhat ? nlohmann::json(*s.rhat) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json run_json(const ChainRun& run) {
  auto j = summary_json(run.summary);
  j["variant"] = std::string(to_string(run.variant));
  j["converged"] = run.converged;
  if (!run.rhat_error.empty()) j["rhat_error"] = run.rhat_error;
  nlohmann::json acc = nlohmann::json::array();
  for (const auto& c : run.chains) {
    nlohmann::json a = nlohmann::json::object();
    for (std::size_t i = 0; i < kNumParams; ++i) {
      if (!std::isnan(c.acceptance[i])) a[kParamNames[i]] = c.acceptance[i];
    }
    if (!std::isnan(c.latent_acceptance)) a["latent"] = c.latent_acceptance;
    if (!std::isnan(c.structural_acceptance)) a["structural"] = c.structural_acceptance;
    acc.push_back(a);
  }
  j["acceptance"] = acc;
  j["augmented"] = run.augmented;
  return j;
}

/// `variant,alpha,beta,lambda1,lambda2,dic` in ranked order.
inline std::string format_selection_csv(const std::vector<FitResult>& fits) {
  std::string out = "variant,alpha,beta,lambda1,lambda2,dic\n";
  for (const auto& f : fits) {
    out += std::string(to_string(f.variant));
    for (double x : f.summary.point) out += "," + fmt(x);
    out += "," + fmt(f.dic) + "\n";
  }
  return out;
}

/// `param,ase,cr` for one method.
inline std::string format_ase_cr_csv(const std::array<AseCr, kNumParams>& m) {
  std::string out = "param,ase,cr\n";
  for (std::size_t i = 0; i < kNumParams; ++i) {
    out += std::string(kParamNames[i]) + "," + fmt(m[i].ase) + "," + (std::isnan(m[i].cr) ? "" : fmt(m[i].cr)) + "\n";
  }
  return out;
}

/// One row per (method, n0, parameter).
inline std::string format_sweep_csv(const std::vector<MethodRows>& groups) {
  std::string out = "method,n0,param,ase,cr\n";
  for (const auto& g : groups) {
    const auto m = evaluate_ase_cr(g.rows);
    for (std::size_t i = 0; i < kNumParams; ++i) {
      out += g.method + "," + fmt(g.n0) + "," + kParamNames[i] + "," + fmt(m[i].ase) + "," +
             (std::isnan(m[i].cr) ? "" : fmt(m[i].cr)) + "\n";
    }
  }
  return out;
}

}  // namespace plasticity
