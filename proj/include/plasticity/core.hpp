#pragma once

// Domain types shared by every part of the library: the four model
// parameters, the model variants used for selection, population and moment
// states, and the observed data containers.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace plasticity {

/// Fastest admissible division rate (one doubling per day).
inline constexpr double kMaxRate = std::numbers::ln2;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Division probabilities and rates of the two-type branching process.
///
/// alpha   probability that a stem-cell division is symmetric (two stem cells)
/// beta    probability that a non-stem division yields a stem cell (de-differentiation)
/// lambda1 stem-cell division rate, per day
/// lambda2 non-stem division rate, per day
///
/// Construction validates the bounds; out-of-range values throw rather than
/// being clamped.
class ModelParams {
 public:
  ModelParams(double alpha, double beta, double lambda1, double lambda2)
      : alpha_{alpha}, beta_{beta}, lambda1_{lambda1}, lambda2_{lambda2} {
    check_probability(alpha_, "alpha");
    check_probability(beta_, "beta");
    check_rate(lambda1_, "lambda1");
    check_rate(lambda2_, "lambda2");
  }

  static bool in_bounds(double alpha, double beta, double lambda1, double lambda2) {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    auto rate_ok = [](double r) { return r > 0.0 && r <= kMaxRate; };
    return prob_ok(alpha) && prob_ok(beta) && rate_ok(lambda1) && rate_ok(lambda2);
  }

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  double lambda1() const { return lambda1_; }
  double lambda2() const { return lambda2_; }

  /// Component access in the fixed order (alpha, beta, lambda1, lambda2).
  double operator[](std::size_t i) const {
    switch (i) {
      case 0: return alpha_;
      case 1: return beta_;
      case 2: return lambda1_;
      case 3: return lambda2_;
      default: throw std::out_of_range("ModelParams index");
    }
  }

  ModelParams with(std::size_t i, double value) const {
    double v[4] = {alpha_, beta_, lambda1_, lambda2_};
    v[i] = value;
    return {v[0], v[1], v[2], v[3]};
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  static void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError(std::string(name) + " must lie in [0, 1], got " + std::to_string(p));
    }
  }
  static void check_rate(double r, const char* name) {
    if (!(r > 0.0 && r <= kMaxRate)) {
      throw ValidationError(std::string(name) + " must lie in (0, ln 2], got " + std::to_string(r));
    }
  }

  double alpha_, beta_, lambda1_, lambda2_;
};

inline constexpr std::size_t kNumParams = 4;
inline constexpr const char* kParamNames[kNumParams] = {"alpha", "beta", "lambda1", "lambda2"};

/// The four competing hypotheses: with or without de-differentiation,
/// with equal or distinct division rates.
enum class ModelVariant {
  kFull,            // beta free, lambda1 != lambda2
  kEqualRates,      // beta free, lambda1 == lambda2
  kHierarchy,       // beta == 0, lambda1 != lambda2
  kHierarchyEqual,  // beta == 0, lambda1 == lambda2
};

inline constexpr ModelVariant kAllVariants[] = {ModelVariant::kHierarchyEqual, ModelVariant::kEqualRates,
                                                ModelVariant::kHierarchy, ModelVariant::kFull};

inline bool has_plasticity(ModelVariant v) {
  return v == ModelVariant::kFull || v == ModelVariant::kEqualRates;
}

inline bool has_equal_rates(ModelVariant v) {
  return v == ModelVariant::kEqualRates || v == ModelVariant::kHierarchyEqual;
}

inline std::string_view to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::kFull: return "full";
    case ModelVariant::kEqualRates: return "equal-rates";
    case ModelVariant::kHierarchy: return "hierarchy";
    case ModelVariant::kHierarchyEqual: return "hierarchy-equal";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown model variant '" + std::string(s) +
                        "' (expected full, equal-rates, hierarchy or hierarchy-equal)");
}

/// Forces the variant's constraints: beta := 0 without plasticity,
/// lambda2 := lambda1 for equal rates.
inline ModelParams clamp_to_variant(const ModelParams& p, ModelVariant v) {
  double beta = has_plasticity(v) ? p.beta() : 0.0;
  double lambda2 = has_equal_rates(v) ? p.lambda1() : p.lambda2();
  return {p.alpha(), beta, p.lambda1(), lambda2};
}

/// Whether parameter `i` is sampled (not pinned by the variant).
inline bool is_free(std::size_t i, ModelVariant v) {
  if (i == 1) return has_plasticity(v);
  if (i == 3) return !has_equal_rates(v);
  return true;
}

/// Cell counts of one trajectory at time t.
struct PopulationState {
  std::uint64_t x = 0;  // stem cells
  std::uint64_t y = 0;  // non-stem cells
  double t = 0.0;

  std::uint64_t total() const { return x + y; }
  double proportion() const { return static_cast<double>(x) / static_cast<double>(x + y); }
};

/// Mean and variance of the stem-cell proportion together with the
/// (deterministic) total population size.
struct MomentState {
  double mu = 0.0;
  double sigma2 = 0.0;
  double nt = 1.0;
  double t = 0.0;
};

struct Interval {
  double lower = 0.0;
  double upper = 1.0;

  bool contains(double x) const { return x >= lower && x <= upper; }
  double width() const { return upper - lower; }
};

/// Uniform priors: alpha, beta ~ Unif(0,1); lambda1, lambda2 ~ Unif(0, ln 2).
struct Priors {
  Interval alpha_range{0.0, 1.0};
  Interval beta_range{0.0, 1.0};
  Interval lambda_range{0.0, kMaxRate};

  Interval range(std::size_t i) const {
    switch (i) {
      case 0: return alpha_range;
      case 1: return beta_range;
      default: return lambda_range;
    }
  }

  void validate() const {
    for (std::size_t i = 0; i < kNumParams; ++i) {
      auto r = range(i);
      if (!(r.lower < r.upper)) throw ValidationError("prior range lower bound must be below upper bound");
    }
    if (alpha_range.lower < 0 || alpha_range.upper > 1 || beta_range.lower < 0 || beta_range.upper > 1 ||
        lambda_range.lower < 0 || lambda_range.upper > kMaxRate) {
      throw ValidationError("prior ranges must lie inside the parameter bounds");
    }
  }
};

namespace detail {
inline void check_times(const std::vector<double>& times) {
  if (times.size() < 2) throw ValidationError("at least two time points are required");
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!std::isfinite(times[k])) throw ValidationError("non-finite time at index " + std::to_string(k));
    if (k > 0 && !(times[k] > times[k - 1])) {
      throw ValidationError("times must be strictly increasing (index " + std::to_string(k) + ")");
    }
  }
}
}  // namespace detail

/// Sample mean and variance of the stem-cell proportion across `n`
/// trajectories, recorded on a time grid.
struct SummarySeries {
  std::vector<double> times;
  std::vector<double> means;
  std::vector<double> variances;
  int n = 5;
  double n0 = 1000.0;

  std::size_t intervals() const { return times.empty() ? 0 : times.size() - 1; }

  void validate() const {
    detail::check_times(times);
    if (means.size() != times.size() || variances.size() != times.size()) {
      throw ValidationError("means and variances must have one entry per time point");
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (!(means[k] >= 0.0 && means[k] <= 1.0)) {
        throw ValidationError("mean out of range [0, 1] at index " + std::to_string(k));
      }
      if (!(variances[k] >= 0.0) || !std::isfinite(variances[k])) {
        throw ValidationError("variance must be non-negative at index " + std::to_string(k));
      }
    }
    if (n < 2) throw ValidationError("trajectory count n must be at least 2");
    if (!(n0 >= 1.0)) throw ValidationError("initial population n0 must be at least 1");
  }
};

/// Per-trajectory stem-cell proportions; `r[i][k]` is trajectory i at times[k].
struct TrajectorySeries {
  std::vector<double> times;
  std::vector<std::vector<double>> r;
  double n0 = 1000.0;

  std::size_t trajectories() const { return r.size(); }

  void validate() const {
    detail::check_times(times);
    if (r.empty()) throw ValidationError("at least one trajectory is required");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i].size() != times.size()) {
        throw ValidationError("trajectory " + std::to_string(i + 1) + " has the wrong length");
      }
      for (double x : r[i]) {
        if (!(x >= 0.0 && x <= 1.0)) {
          throw ValidationError("proportion out of range in trajectory " + std::to_string(i + 1));
        }
      }
    }
    if (!(n0 >= 1.0)) throw ValidationError("initial population n0 must be at least 1");
  }
};

}  // namespace plasticity
