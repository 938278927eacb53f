#pragma once

// Model classes, their natural parameters, and the glue that turns a model
// plus a data sequence into the forward-algorithm inputs.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latmark/emissions.hpp"
#include "latmark/errors.hpp"
#include "latmark/forward.hpp"
#include "latmark/grid.hpp"
#include "latmark/kernels.hpp"
#include "latmark/linalg.hpp"
#include "latmark/parallel.hpp"
#include "latmark/params.hpp"

namespace latmark {

enum class ModelClass { hmm, ssm_ar1, cthmm, ctssm_ou, mmpp, mmmpp, cox_ou_mmpp };

inline const char* class_name(ModelClass c) {
  switch (c) {
    case ModelClass::hmm: return "hmm";
    case ModelClass::ssm_ar1: return "ssm-ar1";
    case ModelClass::cthmm: return "cthmm";
    case ModelClass::ctssm_ou: return "ctssm-ou";
    case ModelClass::mmpp: return "mmpp";
    case ModelClass::mmmpp: return "mmmpp";
    case ModelClass::cox_ou_mmpp: return "cox-ou-mmpp";
  }
  return "?";
}

inline std::optional<ModelClass> parse_class(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(ModelClass::cox_ou_mmpp); ++k) {
    if (s == class_name(static_cast<ModelClass>(k))) return static_cast<ModelClass>(k);
  }
  return std::nullopt;
}

inline bool is_grid_class(ModelClass c) {
  return c == ModelClass::ssm_ar1 || c == ModelClass::ctssm_ou || c == ModelClass::cox_ou_mmpp;
}
inline bool is_continuous_time(ModelClass c) { return c != ModelClass::hmm && c != ModelClass::ssm_ar1; }
inline bool is_point_process(ModelClass c) {
  return c == ModelClass::mmpp || c == ModelClass::mmmpp || c == ModelClass::cox_ou_mmpp;
}
inline bool has_generator(ModelClass c) {
  return c == ModelClass::cthmm || c == ModelClass::mmpp || c == ModelClass::mmmpp;
}

enum class InitialMode { stationary, estimated, fixed };

struct ModelSpec {
  ModelClass cls = ModelClass::hmm;
  int n_states = 1;                       // discrete-state classes
  int grid_m = 0;                         // grid classes
  std::optional<double> grid_lower, grid_upper;
  bool renormalize = false;               // renormalise grid kernel rows
  GeneratorMask mask{1};                  // cthmm / mmpp
  std::vector<bool> zero_rate;            // mmpp states whose arrival rate is exactly 0
  std::vector<std::string> tpm_covariates;  // hmm: t.p.m. predictors besides the intercept
  InitialMode initial = InitialMode::stationary;
  double dt_star = 0.01;                  // cox: step of the generator approximation
  std::vector<std::string> fixed;         // parameter blocks held at their initial values

  int states() const { return is_grid_class(cls) ? grid_m : n_states; }
  bool is_fixed(const std::string& block) const {
    for (const auto& f : fixed)
      if (f == block) return true;
    return false;
  }
};

// Natural parameters. Only the members relevant to the class are used.
struct Params {
  Matrix gamma;               // hmm without t.p.m. covariates
  Matrix beta;                // hmm with covariates: N(N-1) x (1 + p), row-major off-diagonals
  RowVector delta;            // initial distribution for estimated / fixed modes
  Matrix q;                   // cthmm, mmpp
  std::vector<double> rates;  // mmpp arrival rates
  AR1Params ar1;
  OUParams ou;
  EmissionBundle emissions;
};

// One independent sequence (an individual, a track, a record).
struct Sequence {
  std::string id;
  std::vector<double> times;       // observation or event times (continuous-time classes)
  std::vector<Observation> obs;    // one record per time point
  Matrix design;                   // hmm covariates: row t = (1, z_t)
  std::vector<std::size_t> rows;   // source row of each record in the input table

  std::size_t length() const { return obs.size(); }
};

using Dataset = std::vector<Sequence>;

// ---- validation and grid resolution ---------------------------------------

inline void validate(const ModelSpec& spec, const Params& p) {
  const int n = spec.states();
  if (is_grid_class(spec.cls)) {
    if (spec.grid_m < 2) detail::invalid("grid.m must be >= 2");
    if (spec.initial != InitialMode::stationary) detail::invalid("grid models only support the stationary initial mode");
  } else if (n < 1) {
    detail::invalid("model.states must be >= 1");
  }
  switch (spec.cls) {
    case ModelClass::hmm:
      if (spec.tpm_covariates.empty()) {
        if (p.gamma.rows() != n || !is_transition_matrix(p.gamma, 1e-8)) detail::invalid("gamma must be an N x N transition matrix");
      } else if (p.beta.rows() != static_cast<Eigen::Index>(n) * (n - 1) ||
                 p.beta.cols() != static_cast<Eigen::Index>(spec.tpm_covariates.size()) + 1) {
        detail::invalid("beta must have N(N-1) rows and one column per predictor plus the intercept");
      }
      break;
    case ModelClass::ssm_ar1:
      validate(p.ar1);
      break;
    case ModelClass::ctssm_ou:
    case ModelClass::cox_ou_mmpp:
      validate(p.ou);
      if (spec.cls == ModelClass::cox_ou_mmpp && !(spec.dt_star > 0.0)) detail::invalid("model.dt_star must be > 0");
      break;
    case ModelClass::cthmm:
    case ModelClass::mmpp:
    case ModelClass::mmmpp:
      if (spec.mask.size() != n) detail::invalid("generator mask size does not match the state count");
      if (p.q.rows() != n || !is_generator(p.q, 1e-8)) detail::invalid("q must be an N x N generator matrix");
      if (spec.cls != ModelClass::cthmm) {
        if (p.rates.size() != static_cast<std::size_t>(n)) detail::invalid("lambda needs one rate per state");
        for (std::size_t j = 0; j < p.rates.size(); ++j) {
          const bool zero = j < spec.zero_rate.size() && spec.zero_rate[j];
          if (zero ? p.rates[j] != 0.0 : !(p.rates[j] > 0.0)) detail::invalid("lambda must be > 0 except in zero-rate states");
        }
      }
      break;
  }
  if (spec.cls == ModelClass::mmpp && !p.emissions.empty()) detail::invalid("mmpp takes no marks; use mmmpp");
  if (spec.initial != InitialMode::stationary) {
    if (p.delta.size() != n || std::abs(p.delta.sum() - 1.0) > 1e-8 || (p.delta.array() < 0.0).any()) {
      detail::invalid("delta must be a probability vector with one entry per state");
    }
  }
  p.emissions.check_states(static_cast<std::size_t>(n));
}

// Fills in default grid bounds (stationary mean +- 3.5 stationary sd of the
// supplied parameters). Bounds then stay fixed for the whole fit.
inline ModelSpec resolve_grid(ModelSpec spec, const Params& p) {
  if (!is_grid_class(spec.cls)) return spec;
  double mean = 0.0, sd = 1.0;
  if (spec.cls == ModelClass::ssm_ar1) {
    mean = p.ar1.mu;
    sd = ar1_stationary_sd(p.ar1);
  } else {
    mean = p.ou.mu;
    sd = ou_stationary_sd(p.ou);
  }
  if (!spec.grid_lower) spec.grid_lower = mean - 3.5 * sd;
  if (!spec.grid_upper) spec.grid_upper = mean + 3.5 * sd;
  return spec;
}

inline Grid model_grid(const ModelSpec& spec) {
  detail::require(spec.grid_lower && spec.grid_upper, "grid bounds are unresolved");
  return build_grid(*spec.grid_lower, *spec.grid_upper, spec.grid_m);
}

// ---- likelihood machinery -------------------------------------------------

// Precomputes everything that does not depend on the sequence.
class Evaluator {
 public:
  Evaluator(const ModelSpec& spec, const Params& p) : spec_(spec), p_(p) {
    validate(spec_, p_);
    const int n = spec_.states();
    if (is_grid_class(spec_.cls)) {
      grid_ = model_grid(spec_);
      state_values_ = grid_.midpoints;
    } else {
      state_values_.assign(static_cast<std::size_t>(n), 0.0);
    }
    switch (spec_.cls) {
      case ModelClass::hmm:
        if (spec_.tpm_covariates.empty()) gamma_ = p_.gamma;
        break;
      case ModelClass::ssm_ar1:
        gamma_ = ar1_tpm(grid_, p_.ar1, spec_.renormalize);
        break;
      case ModelClass::cthmm:
      case ModelClass::mmpp:
      case ModelClass::mmmpp:
        q_ = p_.q;
        rates_ = p_.rates;
        break;
      case ModelClass::cox_ou_mmpp:
        q_ = generator_approx(ou_tpm(grid_, p_.ou, spec_.dt_star, spec_.renormalize), spec_.dt_star);
        for (double b : grid_.midpoints) rates_.push_back(std::exp(b));
        break;
      case ModelClass::ctssm_ou:
        break;
    }
    if (spec_.initial != InitialMode::stationary) {
      delta_ = p_.delta;
    } else {
      switch (spec_.cls) {
        case ModelClass::hmm:
          if (spec_.tpm_covariates.empty()) delta_ = stationary_discrete(gamma_);
          break;
        case ModelClass::ssm_ar1:
          delta_ = ar1_initial(grid_, p_.ar1);
          break;
        case ModelClass::ctssm_ou:
          delta_ = ou_initial(grid_, p_.ou);
          break;
        default:
          delta_ = stationary_continuous(q_);
          break;
      }
    }
  }

  const ModelSpec& spec() const { return spec_; }
  const Params& params() const { return p_; }
  const Grid& grid() const { return grid_; }
  std::span<const double> state_values() const { return state_values_; }
  int states() const { return spec_.states(); }

  RowVector delta1(const Sequence& s) const {
    if (spec_.cls == ModelClass::hmm && !spec_.tpm_covariates.empty() && spec_.initial == InitialMode::stationary) {
      return stationary_discrete(tpm_at(s, 0));
    }
    return delta_;
  }

  RowVector pdiag(const Sequence& s, std::size_t tau) const {
    return emission_diag(p_.emissions, state_values_, s.obs[tau]);
  }

  // Omega into observation tau >= 1. For continuous-time classes this depends
  // only on the gap, so callers may reuse the previous operator.
  Matrix omega(const Sequence& s, std::size_t tau) const {
    switch (spec_.cls) {
      case ModelClass::hmm:
        return spec_.tpm_covariates.empty() ? gamma_ : tpm_at(s, tau);
      case ModelClass::ssm_ar1:
        return gamma_;
      default:
        return omega_for_gap(gap(s, tau));
    }
  }

  Matrix omega_for_gap(double dt) const {
    switch (spec_.cls) {
      case ModelClass::cthmm:
        return omega_cthmm(q_, dt);
      case ModelClass::ctssm_ou:
        if (dt == 0.0) return Matrix::Identity(grid_.m, grid_.m);
        return ou_tpm(grid_, p_.ou, dt, spec_.renormalize);
      case ModelClass::mmpp:
      case ModelClass::mmmpp:
      case ModelClass::cox_ou_mmpp:
        return omega_mmpp(q_, rates_, dt, true);
      default:
        detail::invalid("omega_for_gap: discrete-time model");
    }
  }

  // Transition operator used for the one-step-ahead forecast after the last
  // record: the homogeneous t.p.m., the last covariate t.p.m., or Omega(dt).
  Matrix next_omega(const Sequence& s, double dt) const {
    if (spec_.cls == ModelClass::hmm) {
      return spec_.tpm_covariates.empty() ? gamma_ : tpm_at(s, s.length() - 1);
    }
    if (spec_.cls == ModelClass::ssm_ar1) return gamma_;
    detail::require(dt > 0.0, "forecast: the next gap must be > 0");
    if (spec_.cls == ModelClass::cthmm) return omega_cthmm(q_, dt);
    if (spec_.cls == ModelClass::ctssm_ou) return ou_tpm(grid_, p_.ou, dt, spec_.renormalize);
    detail::invalid("forecast: not defined for point-process models");
  }

  template <class Fn>
  void for_each_omega(const Sequence& s, Fn&& fn) const {
    Matrix cur;
    double last_gap = -1.0;
    for (std::size_t tau = 1; tau < s.length(); ++tau) {
      if (is_continuous_time(spec_.cls)) {
        const double g = gap(s, tau);
        if (g != last_gap) {
          cur = omega_for_gap(g);
          last_gap = g;
        }
      } else if (tau == 1 || !(spec_.cls == ModelClass::ssm_ar1 || spec_.tpm_covariates.empty())) {
        cur = omega(s, tau);
      }
      fn(tau, static_cast<const Matrix&>(cur));
    }
  }

  // Filter state after consuming the first `upto` records of s.
  ForwardFilter filter(const Sequence& s, std::size_t upto) const {
    detail::require(upto >= 1 && upto <= s.length(), "filter: record count out of range");
    ForwardFilter f;
    f.start(delta1(s), pdiag(s, 0));
    Matrix cur;
    double last_gap = -1.0;
    for (std::size_t tau = 1; tau < upto; ++tau) {
      if (is_continuous_time(spec_.cls)) {
        const double g = gap(s, tau);
        if (g != last_gap) {
          cur = omega_for_gap(g);
          last_gap = g;
        }
        f.advance(cur, pdiag(s, tau));
      } else if (spec_.cls == ModelClass::ssm_ar1 || spec_.tpm_covariates.empty()) {
        f.advance(gamma_, pdiag(s, tau));
      } else {
        f.advance(tpm_at(s, tau), pdiag(s, tau));
      }
    }
    return f;
  }

  double log_likelihood(const Sequence& s) const {
    detail::require(s.length() > 0, "log_likelihood: empty sequence");
    return filter(s, s.length()).log_likelihood();
  }

  DecodeResult decode(const Sequence& s) const {
    detail::require(s.length() > 0, "decode: empty sequence");
    std::vector<Matrix> ops;
    const bool shared = spec_.cls == ModelClass::ssm_ar1 || (spec_.cls == ModelClass::hmm && spec_.tpm_covariates.empty());
    if (!shared) {
      ops.reserve(s.length());
      ops.emplace_back();
      for_each_omega(s, [&](std::size_t, const Matrix& om) { ops.push_back(om); });
    }
    return viterbi(
        delta1(s), s.length(),
        [&](std::size_t tau) -> const Matrix& { return shared ? gamma_ : ops[tau]; },
        [&](std::size_t tau) { return pdiag(s, tau); });
  }

 private:
  static double gap(const Sequence& s, std::size_t tau) {
    detail::require(s.times.size() == s.length(), "continuous-time model needs a time for every record");
    const double dt = s.times[tau] - s.times[tau - 1];
    if (!(dt >= 0.0) || !std::isfinite(dt)) {
      detail::invalid("times must be nondecreasing within sequence '" + s.id + "'");
    }
    return dt;
  }

  Matrix tpm_at(const Sequence& s, std::size_t t) const {
    const int n = spec_.n_states;
    detail::require(s.design.rows() == static_cast<Eigen::Index>(s.length()), "sequence design matrix is missing rows");
    return tpm_from_eta(eta_from_design(n, p_.beta, s.design.row(static_cast<Eigen::Index>(t))));
  }

  ModelSpec spec_;
  Params p_;
  Grid grid_;
  std::vector<double> state_values_;
  Matrix gamma_;
  Matrix q_;
  std::vector<double> rates_;
  RowVector delta_;
};

// Sum of per-sequence log-likelihoods. Sequences are evaluated concurrently;
// the sum is taken in sequence order so results do not depend on threading.
inline double log_likelihood(const Evaluator& ev, const Dataset& data, int threads = 1) {
  std::vector<double> parts(data.size(), 0.0);
  parallel_for(data.size(), threads, [&](std::size_t i) { parts[i] = ev.log_likelihood(data[i]); });
  double total = 0.0;
  for (double v : parts) total += v;
  return total;
}

inline double log_likelihood(const ModelSpec& spec, const Params& p, const Dataset& data, int threads = 1) {
  return log_likelihood(Evaluator(resolve_grid(spec, p), p), data, threads);
}

// ---- parameter blocks -----------------------------------------------------

namespace detail {

struct FamilyParam {
  const char* name;
  Transform transform;
};

inline std::vector<FamilyParam> family_params(Family f, bool has_covariate) {
  switch (f) {
    case Family::normal:
      if (has_covariate) return {{"mean", Transform::identity}, {"sd", Transform::log}, {"slope", Transform::identity}};
      return {{"mean", Transform::identity}, {"sd", Transform::log}};
    case Family::gamma: return {{"shape", Transform::log}, {"scale", Transform::log}};
    case Family::von_mises: return {{"mean", Transform::identity}, {"kappa", Transform::log}};
    case Family::poisson: return {{"rate", Transform::log}};
    case Family::bernoulli: return {{"prob", Transform::logit}};
    case Family::bernoulli_offset: return {{"intercept", Transform::identity}};
    case Family::sv_normal: return {{"mu", Transform::identity}, {"beta", Transform::log}};
    case Family::indicator: return {};
  }
  return {};
}

inline double& family_param(Distribution& d, const std::string& name) {
  if (auto* p = std::get_if<Normal>(&d)) {
    if (name == "mean") return p->mean;
    if (name == "sd") return p->sd;
    if (name == "slope") return p->slope;
  } else if (auto* p = std::get_if<GammaDist>(&d)) {
    if (name == "shape") return p->shape;
    if (name == "scale") return p->scale;
  } else if (auto* p = std::get_if<VonMises>(&d)) {
    if (name == "mean") return p->mean;
    if (name == "kappa") return p->kappa;
  } else if (auto* p = std::get_if<Poisson>(&d)) {
    if (name == "rate") return p->rate;
  } else if (auto* p = std::get_if<Bernoulli>(&d)) {
    if (name == "prob") return p->prob;
  } else if (auto* p = std::get_if<BernoulliOffset>(&d)) {
    if (name == "intercept") return p->intercept;
  } else if (auto* p = std::get_if<SvNormal>(&d)) {
    if (name == "mu") return p->mu;
    if (name == "beta") return p->beta;
  }
  invalid("unknown emission parameter '" + name + "'");
}

inline std::string idx(std::size_t i) { return std::to_string(i + 1); }
inline std::string idx(std::size_t i, std::size_t j) { return std::to_string(i + 1) + "," + std::to_string(j + 1); }

inline ParamBlock scalar_block(const std::string& name, Transform t, double v) {
  ParamBlock b;
  b.name = name;
  b.transform = t;
  b.labels = {name};
  b.values = {v};
  return b;
}

// State indices whose parameters appear in emission blocks of component c.
inline std::vector<std::size_t> emission_states(const EmissionComponent& c) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < c.per_state.size(); ++j)
    if (c.per_state.size() == 1 || c.observed_in(j)) out.push_back(j);
  return out;
}

}  // namespace detail

// Every natural parameter of the model as named blocks, in a fixed order.
// Blocks listed in spec.fixed are marked fixed.
inline std::vector<ParamBlock> describe(const ModelSpec& spec, const Params& p) {
  std::vector<ParamBlock> out;
  const auto n = static_cast<std::size_t>(spec.states());
  switch (spec.cls) {
    case ModelClass::hmm:
      if (spec.tpm_covariates.empty()) {
        ParamBlock b;
        b.name = "gamma";
        b.transform = Transform::simplex;
        b.row_width = n;
        for (std::size_t i = 0; i < n; ++i) {
          b.reference.push_back(i);
          for (std::size_t j = 0; j < n; ++j) {
            b.labels.push_back("gamma[" + detail::idx(i, j) + "]");
            b.values.push_back(p.gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
          }
        }
        if (n > 1) out.push_back(std::move(b));
      } else {
        ParamBlock b;
        b.name = "beta";
        std::vector<std::string> preds{"intercept"};
        preds.insert(preds.end(), spec.tpm_covariates.begin(), spec.tpm_covariates.end());
        Eigen::Index r = 0;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            for (std::size_t k = 0; k < preds.size(); ++k) {
              b.labels.push_back("beta[" + detail::idx(i, j) + "]." + preds[k]);
              b.values.push_back(p.beta(r, static_cast<Eigen::Index>(k)));
            }
            ++r;
          }
        }
        out.push_back(std::move(b));
      }
      break;
    case ModelClass::ssm_ar1:
      out.push_back(detail::scalar_block("phi", Transform::atanh, p.ar1.phi));
      out.push_back(detail::scalar_block("mu", Transform::identity, p.ar1.mu));
      out.push_back(detail::scalar_block("sigma", Transform::log, p.ar1.sigma));
      break;
    case ModelClass::ctssm_ou:
    case ModelClass::cox_ou_mmpp:
      out.push_back(detail::scalar_block("theta", Transform::log, p.ou.theta));
      out.push_back(detail::scalar_block("mu", Transform::identity, p.ou.mu));
      out.push_back(detail::scalar_block("sigma", Transform::log, p.ou.sigma));
      break;
    case ModelClass::cthmm:
    case ModelClass::mmpp:
    case ModelClass::mmmpp: {
      ParamBlock b;
      b.name = "q";
      b.transform = Transform::log;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (spec.mask.is_free(static_cast<int>(i), static_cast<int>(j))) {
            b.labels.push_back("q[" + detail::idx(i, j) + "]");
            b.values.push_back(p.q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
          }
      if (!b.values.empty()) out.push_back(std::move(b));
      if (spec.cls != ModelClass::cthmm) {
        ParamBlock l;
        l.name = "lambda";
        l.transform = Transform::log;
        for (std::size_t j = 0; j < n; ++j) {
          if (j < spec.zero_rate.size() && spec.zero_rate[j]) continue;
          l.labels.push_back("lambda[" + detail::idx(j) + "]");
          l.values.push_back(p.rates[j]);
        }
        out.push_back(std::move(l));
      }
      break;
    }
  }
  if (spec.initial == InitialMode::estimated && n > 1) {
    ParamBlock b;
    b.name = "delta";
    b.transform = Transform::simplex;
    b.row_width = n;
    b.reference = {0};
    for (std::size_t j = 0; j < n; ++j) {
      b.labels.push_back("delta[" + detail::idx(j) + "]");
      b.values.push_back(p.delta(static_cast<Eigen::Index>(j)));
    }
    out.push_back(std::move(b));
  }
  for (const auto& c : p.emissions.components) {
    if (c.per_state.empty()) continue;
    const Family f = family_of(c.per_state.front());
    for (const auto& d : c.per_state) {
      if (family_of(d) != f) detail::invalid("emission component '" + c.name + "' mixes families across states");
    }
    for (const auto& fp : detail::family_params(f, c.covariate.has_value())) {
      ParamBlock b;
      b.name = c.name + "." + fp.name;
      b.transform = fp.transform;
      for (std::size_t j : detail::emission_states(c)) {
        b.labels.push_back(c.per_state.size() == 1 ? b.name : b.name + "[" + detail::idx(j) + "]");
        Distribution d = c.per_state[j];
        b.values.push_back(detail::family_param(d, fp.name));
      }
      if (!b.values.empty()) out.push_back(std::move(b));
    }
  }
  for (auto& b : out) b.fixed = spec.is_fixed(b.name);
  for (const auto& f : spec.fixed) {
    bool known = false;
    for (const auto& b : out) known = known || b.name == f;
    if (!known) detail::invalid("fixed parameter block '" + f + "' does not exist in this model");
  }
  return out;
}

// Writes block values back into a copy of `base`.
inline Params assemble(const ModelSpec& spec, const Params& base, const std::vector<ParamBlock>& blocks) {
  Params p = base;
  const auto n = static_cast<std::size_t>(spec.states());
  for (const auto& b : blocks) {
    const auto& v = b.values;
    if (b.name == "gamma") {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p.gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i * n + j];
    } else if (b.name == "beta") {
      const auto cols = static_cast<std::size_t>(p.beta.cols());
      for (std::size_t k = 0; k < v.size(); ++k)
        p.beta(static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols)) = v[k];
    } else if (b.name == "phi") {
      p.ar1.phi = v[0];
    } else if (b.name == "mu") {
      (spec.cls == ModelClass::ssm_ar1 ? p.ar1.mu : p.ou.mu) = v[0];
    } else if (b.name == "sigma") {
      (spec.cls == ModelClass::ssm_ar1 ? p.ar1.sigma : p.ou.sigma) = v[0];
    } else if (b.name == "theta") {
      p.ou.theta = v[0];
    } else if (b.name == "q") {
      p.q = generator_from_rates(spec.mask, v);
    } else if (b.name == "lambda") {
      std::size_t k = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const bool zero = j < spec.zero_rate.size() && spec.zero_rate[j];
        p.rates[j] = zero ? 0.0 : v[k++];
      }
    } else if (b.name == "delta") {
      for (std::size_t j = 0; j < n; ++j) p.delta(static_cast<Eigen::Index>(j)) = v[j];
    } else {
      const auto dot = b.name.find('.');
      detail::require(dot != std::string::npos, "assemble: unknown parameter block");
      const std::string comp = b.name.substr(0, dot), param = b.name.substr(dot + 1);
      bool found = false;
      for (auto& c : p.emissions.components) {
        if (c.name != comp) continue;
        found = true;
        std::size_t k = 0;
        for (std::size_t j : detail::emission_states(c)) detail::family_param(c.per_state[j], param) = v[k++];
      }
      if (!found) detail::invalid("assemble: unknown emission component '" + comp + "'");
    }
  }
  return p;
}

// Number of estimated scalar parameters.
inline std::size_t parameter_count(const ModelSpec& spec, const Params& p) { return free_size(describe(spec, p)); }

}  // namespace latmark
