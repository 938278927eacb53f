#pragma once

// State-dependent observation distributions and the diagonal of P(x).

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "latmark/errors.hpp"
#include "latmark/linalg.hpp"

namespace latmark {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double x) { return std::isnan(x); }

/// log I0(x) for x >= 0. Power series below 15, asymptotic expansion above.
inline double log_bessel_i0(double x) {
  detail::require(x >= 0.0 && std::isfinite(x), "log_bessel_i0: argument must be finite and >= 0");
  if (x < 15.0) {
    const double q = 0.25 * x * x;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 200; ++k) {
      term *= q / (static_cast<double>(k) * k);
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    return std::log(sum);
  }
  // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 40; ++k) {
    const double next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x);
    if (next > term) break;
    term = next;
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

// ---- families --------------------------------------------------------------
// Each struct holds one state's parameters in natural units.

struct Normal {
  double mean = 0.0;
  double sd = 1.0;
  double slope = 0.0;  // coefficient on the component's covariate, if bound
};
struct GammaDist {
  double shape = 1.0;
  double scale = 1.0;
};
struct VonMises {
  double mean = 0.0;   // direction in (-pi, pi]
  double kappa = 0.0;  // concentration >= 0
};
struct Poisson {
  double rate = 1.0;
};
struct Bernoulli {
  double prob = 0.5;
};
// logit(pi) = intercept + state value
struct BernoulliOffset {
  double intercept = 0.0;
};
// x ~ N(mu, (beta * exp(g / 2))^2) with g the state value
struct SvNormal {
  double mu = 0.0;
  double beta = 1.0;
};
// Hard identification of one state: x = 1 iff this state is the marked one.
struct Indicator {
  bool marked = false;
};

using Distribution =
    std::variant<Normal, GammaDist, VonMises, Poisson, Bernoulli, BernoulliOffset, SvNormal, Indicator>;

enum class Family { normal, gamma, von_mises, poisson, bernoulli, bernoulli_offset, sv_normal, indicator };

inline Family family_of(const Distribution& d) { return static_cast<Family>(d.index()); }

inline const char* family_name(Family f) {
  switch (f) {
    case Family::normal: return "normal";
    case Family::gamma: return "gamma";
    case Family::von_mises: return "von-mises";
    case Family::poisson: return "poisson";
    case Family::bernoulli: return "bernoulli";
    case Family::bernoulli_offset: return "bernoulli-state-offset";
    case Family::sv_normal: return "sv-scaled-normal";
    case Family::indicator: return "degenerate-indicator";
  }
  return "?";
}

inline std::optional<Family> parse_family(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(Family::indicator); ++k) {
    const auto f = static_cast<Family>(k);
    if (s == family_name(f)) return f;
  }
  return std::nullopt;
}

// Families whose density uses the state value (grid midpoint) directly.
inline bool uses_state_value(Family f) {
  return f == Family::bernoulli_offset || f == Family::sv_normal;
}

inline void validate(const Distribution& d) {
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Normal>) {
          detail::require(p.sd > 0.0 && std::isfinite(p.sd) && std::isfinite(p.mean) && std::isfinite(p.slope),
                          "normal: sd must be > 0 and parameters finite");
        } else if constexpr (std::is_same_v<T, GammaDist>) {
          detail::require(p.shape > 0.0 && p.scale > 0.0 && std::isfinite(p.shape) && std::isfinite(p.scale),
                          "gamma: shape and scale must be > 0");
        } else if constexpr (std::is_same_v<T, VonMises>) {
          detail::require(p.kappa >= 0.0 && std::isfinite(p.kappa) && std::isfinite(p.mean),
                          "von-mises: concentration must be >= 0");
        } else if constexpr (std::is_same_v<T, Poisson>) {
          detail::require(p.rate > 0.0 && std::isfinite(p.rate), "poisson: rate must be > 0");
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          detail::require(p.prob >= 0.0 && p.prob <= 1.0, "bernoulli: prob must be in [0, 1]");
        } else if constexpr (std::is_same_v<T, BernoulliOffset>) {
          detail::require(std::isfinite(p.intercept), "bernoulli-state-offset: intercept must be finite");
        } else if constexpr (std::is_same_v<T, SvNormal>) {
          detail::require(p.beta > 0.0 && std::isfinite(p.beta) && std::isfinite(p.mu),
                          "sv-scaled-normal: beta must be > 0");
        }
      },
      d);
}

namespace detail {

inline double normal_log_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline bool is_count(double x) { return x >= 0.0 && std::floor(x) == x && std::isfinite(x); }

inline double log_sigmoid(double eta) {
  return eta >= 0.0 ? -std::log1p(std::exp(-eta)) : eta - std::log1p(std::exp(eta));
}

inline double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace detail

// log f(x | state). `state_value` is the grid midpoint for grid models and is
// ignored by families that do not use it unless `state_in_mean` is set (normal
// with mean = state value + mean). `covariate` feeds the normal linear mean.
// Returns -inf outside the support, never NaN.
inline double log_density(const Distribution& d, double x, double state_value = 0.0,
                          double covariate = 0.0, bool state_in_mean = false) {
  validate(d);
  if (!std::isfinite(x)) return kNegInf;
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Normal>) {
          const double m = p.mean + p.slope * covariate + (state_in_mean ? state_value : 0.0);
          return detail::normal_log_pdf(x, m, p.sd);
        } else if constexpr (std::is_same_v<T, GammaDist>) {
          if (x <= 0.0) return kNegInf;
          return (p.shape - 1.0) * std::log(x) - x / p.scale - std::lgamma(p.shape) - p.shape * std::log(p.scale);
        } else if constexpr (std::is_same_v<T, VonMises>) {
          if (x < -std::numbers::pi || x > std::numbers::pi) return kNegInf;
          return p.kappa * std::cos(x - p.mean) - std::log(2.0 * std::numbers::pi) - log_bessel_i0(p.kappa);
        } else if constexpr (std::is_same_v<T, Poisson>) {
          if (!detail::is_count(x)) return kNegInf;
          return x * std::log(p.rate) - p.rate - std::lgamma(x + 1.0);
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          if (x == 1.0) return std::log(p.prob);
          if (x == 0.0) return std::log1p(-p.prob);
          return kNegInf;
        } else if constexpr (std::is_same_v<T, BernoulliOffset>) {
          const double eta = p.intercept + state_value;
          if (x == 1.0) return detail::log_sigmoid(eta);
          if (x == 0.0) return detail::log_sigmoid(-eta);
          return kNegInf;
        } else if constexpr (std::is_same_v<T, SvNormal>) {
          return detail::normal_log_pdf(x, p.mu, p.beta * std::exp(0.5 * state_value));
        } else {
          if (x != 0.0 && x != 1.0) return kNegInf;
          return ((x == 1.0) == p.marked) ? 0.0 : kNegInf;
        }
      },
      d);
}

// Density on the natural scale. Bernoulli-type families return p and 1 - p
// directly so the two masses add to one.
inline double density(const Distribution& d, double x, double state_value = 0.0, double covariate = 0.0,
                      bool state_in_mean = false) {
  if (const auto* b = std::get_if<BernoulliOffset>(&d)) {
    validate(d);
    const double p = detail::sigmoid(b->intercept + state_value);
    if (x == 1.0) return p;
    if (x == 0.0) return 1.0 - p;
    return 0.0;
  }
  if (const auto* b = std::get_if<Bernoulli>(&d)) {
    validate(d);
    if (x == 1.0) return b->prob;
    if (x == 0.0) return 1.0 - b->prob;
    return 0.0;
  }
  return std::exp(log_density(d, x, state_value, covariate, state_in_mean));
}

// ---- observations and bundles ---------------------------------------------

// One record: a value per emission component (NaN = missing) and the
// covariate values the components may reference.
struct Observation {
  std::vector<double> values;
  std::vector<double> covariates;

  bool missing(std::size_t k) const { return k >= values.size() || is_missing(values[k]); }
};

// One observed variable. `per_state` holds N entries for discrete-state
// models or a single shared entry for grid models.
struct EmissionComponent {
  std::string name;
  std::vector<Distribution> per_state;
  std::optional<std::size_t> covariate;  // index into Observation::covariates
  bool state_in_mean = false;            // normal family on a grid: mean = state + mean
  std::vector<bool> unobserved;          // states in which this variable is never recorded

  const Distribution& at(std::size_t state) const {
    return per_state.size() == 1 ? per_state.front() : per_state.at(state);
  }
  bool observed_in(std::size_t state) const { return state >= unobserved.size() || !unobserved[state]; }
};

// Product family over components (contemporaneous conditional independence).
// An empty bundle is the MMPP-without-marks case: every diagonal is all ones.
struct EmissionBundle {
  std::vector<EmissionComponent> components;

  bool empty() const { return components.empty(); }

  void check_states(std::size_t n_states) const {
    for (const auto& c : components) {
      if (c.per_state.size() != 1 && c.per_state.size() != n_states) {
        detail::invalid("emission component '" + c.name + "' has " + std::to_string(c.per_state.size()) +
                        " state entries, model has " + std::to_string(n_states));
      }
      for (const auto& d : c.per_state) validate(d);
    }
  }
};

// Sum of component log densities for one state. Missing components add 0; a
// value recorded in a state where its variable is unobservable gives -inf.
inline double log_density(const EmissionBundle& bundle, std::size_t state, double state_value,
                          const Observation& x) {
  double total = 0.0;
  for (std::size_t k = 0; k < bundle.components.size(); ++k) {
    if (x.missing(k)) continue;
    const auto& c = bundle.components[k];
    if (!c.observed_in(state)) return kNegInf;
    const double cov = c.covariate ? x.covariates.at(*c.covariate) : 0.0;
    total += log_density(c.at(state), x.values[k], state_value, cov, c.state_in_mean);
    if (total == kNegInf) break;
  }
  return total;
}

// Diagonal of P(x): entry j = prod_k f_jk(x_k). `state_values` has one entry
// per state (grid midpoints, or anything for discrete states).
inline RowVector emission_diag(const EmissionBundle& bundle, std::span<const double> state_values,
                               const Observation& x) {
  const std::size_t n = state_values.size();
  RowVector out = RowVector::Ones(static_cast<Eigen::Index>(n));
  for (const auto& c : bundle.components) {
    if (c.per_state.size() != 1 && c.per_state.size() != n) {
      detail::invalid("emission_diag: component '" + c.name + "' does not match the state count");
    }
  }
  for (std::size_t k = 0; k < bundle.components.size(); ++k) {
    if (x.missing(k)) continue;
    const auto& c = bundle.components[k];
    const double cov = c.covariate ? x.covariates.at(*c.covariate) : 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      if (out(jj) == 0.0) continue;
      out(jj) *= c.observed_in(j) ? density(c.at(j), x.values[k], state_values[j], cov, c.state_in_mean) : 0.0;
    }
  }
  return out;
}

}  // namespace latmark
