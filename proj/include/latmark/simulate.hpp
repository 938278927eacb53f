#pragma once

// Simulators for every model class. Each sequence draws from its own
// mt19937_64 stream seeded by (seed, stream index), so multi-sequence output
// does not depend on evaluation order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "latmark/emissions.hpp"
#include "latmark/errors.hpp"
#include "latmark/grid.hpp"
#include "latmark/kernels.hpp"
#include "latmark/linalg.hpp"
#include "latmark/model.hpp"

namespace latmark {

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Inverse-CDF draw from a probability row.
template <class Row>
int draw_index(const Row& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  const auto n = static_cast<int>(p.size());
  for (int j = 0; j < n; ++j) {
    acc += p(j);
    if (u < acc) return j;
  }
  for (int j = n - 1; j >= 0; --j)
    if (p(j) > 0.0) return j;
  return n - 1;
}

// ---- state processes ------------------------------------------------------

inline std::vector<int> sim_markov_chain(const Matrix& gamma, const RowVector& delta1, std::size_t length, Rng& rng) {
  detail::require(is_transition_matrix(gamma, 1e-8), "sim_markov_chain: gamma is not a transition matrix");
  detail::require(delta1.size() == gamma.rows(), "sim_markov_chain: delta1 has the wrong length");
  std::vector<int> s(length);
  if (length == 0) return s;
  s[0] = draw_index(delta1, rng);
  for (std::size_t t = 1; t < length; ++t) s[t] = draw_index(gamma.row(s[t - 1]), rng);
  return s;
}

inline std::vector<int> sim_markov_chain(const Matrix& gamma, const RowVector& delta1, std::size_t length,
                                         std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return sim_markov_chain(gamma, delta1, length, rng);
}

// Piecewise-constant path: states[k] holds on [times[k], times[k + 1]).
struct CtmcPath {
  std::vector<double> times;
  std::vector<int> states;
  double horizon = 0.0;

  int state_at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    return states[static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - times.begin() - 1))];
  }

  double time_in(int state) const {
    double total = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double end = k + 1 < times.size() ? times[k + 1] : horizon;
      if (states[k] == state) total += end - times[k];
    }
    return total;
  }
};

// Gillespie simulation: holding time Exp(-q_ii), jump to j with q_ij / -q_ii.
inline CtmcPath sim_ctmc(const Matrix& q, const RowVector& delta, double horizon, Rng& rng) {
  detail::require(is_generator(q, 1e-8), "sim_ctmc: q is not a generator");
  detail::require(delta.size() == q.rows(), "sim_ctmc: delta has the wrong length");
  detail::require(horizon >= 0.0 && std::isfinite(horizon), "sim_ctmc: horizon must be >= 0");
  CtmcPath path;
  path.horizon = horizon;
  double t = 0.0;
  int s = draw_index(delta, rng);
  path.times.push_back(0.0);
  path.states.push_back(s);
  for (;;) {
    const double out_rate = -q(s, s);
    if (!(out_rate > 0.0)) break;
    t += std::exponential_distribution<double>(out_rate)(rng);
    if (t >= horizon) break;
    RowVector jump = q.row(s) / out_rate;
    jump(s) = 0.0;
    s = draw_index(jump, rng);
    path.times.push_back(t);
    path.states.push_back(s);
  }
  return path;
}

inline CtmcPath sim_ctmc(const Matrix& q, const RowVector& delta, double horizon, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return sim_ctmc(q, delta, horizon, rng);
}

// One exact OU transition over dt.
inline double ou_step(const OUParams& p, double s, double dt, Rng& rng) {
  const double decay = std::exp(-p.theta * dt);
  const double var = p.sigma * p.sigma * -std::expm1(-2.0 * p.theta * dt) / (2.0 * p.theta);
  const double mean = decay * s + p.mu * (1.0 - decay);
  return mean + std::sqrt(var) * std::normal_distribution<double>(0.0, 1.0)(rng);
}

enum class OuMethod { euler_maruyama, exact };

// Values at 0, step, 2 step, ... up to the horizon.
inline std::vector<double> sim_ou_path(const OUParams& p, double s0, double horizon, double step, OuMethod method,
                                       Rng& rng) {
  detail::require(p.theta > 0.0 && p.sigma >= 0.0, "sim_ou_path: theta must be > 0 and sigma >= 0");
  detail::require(step > 0.0 && horizon >= 0.0, "sim_ou_path: step must be > 0");
  const auto n = static_cast<std::size_t>(std::floor(horizon / step + 1e-9));
  std::vector<double> out(n + 1);
  out[0] = s0;
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t k = 1; k <= n; ++k) {
    const double s = out[k - 1];
    if (method == OuMethod::euler_maruyama) {
      out[k] = s + p.theta * (p.mu - s) * step + p.sigma * std::sqrt(step) * z(rng);
    } else if (p.sigma == 0.0) {
      out[k] = p.mu + (s - p.mu) * std::exp(-p.theta * step);
    } else {
      out[k] = ou_step(p, s, step, rng);
    }
  }
  return out;
}

inline std::vector<double> sim_ou_path(const OUParams& p, double s0, double horizon, double step, OuMethod method,
                                       std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return sim_ou_path(p, s0, horizon, step, method, rng);
}

// ---- emissions --------------------------------------------------------------

// Best and Fisher (1979) rejection sampler, result in [-pi, pi].
inline double sim_von_mises(double mean, double kappa, Rng& rng) {
  constexpr double pi = std::numbers::pi;
  if (kappa < 1e-8) return std::remainder(mean + pi * (2.0 * uniform01(rng) - 1.0), 2.0 * pi);
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  double f = 0.0;
  for (;;) {
    const double u1 = uniform01(rng), u2 = uniform01(rng);
    const double z = std::cos(pi * u1);
    f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) break;
  }
  const double sign = uniform01(rng) > 0.5 ? 1.0 : -1.0;
  return std::remainder(mean + sign * std::acos(std::clamp(f, -1.0, 1.0)), 2.0 * pi);
}

inline double sim_emission(const Distribution& d, double state_value, double covariate, bool state_in_mean, Rng& rng) {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Normal>) {
          const double m = p.mean + p.slope * covariate + (state_in_mean ? state_value : 0.0);
          return std::normal_distribution<double>(m, p.sd)(rng);
        } else if constexpr (std::is_same_v<T, GammaDist>) {
          return std::gamma_distribution<double>(p.shape, p.scale)(rng);
        } else if constexpr (std::is_same_v<T, VonMises>) {
          return sim_von_mises(p.mean, p.kappa, rng);
        } else if constexpr (std::is_same_v<T, Poisson>) {
          return static_cast<double>(std::poisson_distribution<long long>(p.rate)(rng));
        } else if constexpr (std::is_same_v<T, Bernoulli>) {
          return uniform01(rng) < p.prob ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, BernoulliOffset>) {
          return uniform01(rng) < 1.0 / (1.0 + std::exp(-(p.intercept + state_value))) ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, SvNormal>) {
          return std::normal_distribution<double>(p.mu, p.beta * std::exp(0.5 * state_value))(rng);
        } else {
          return p.marked ? 1.0 : 0.0;
        }
      },
      d);
}

// One record for state j (value `state_value` on a grid); components that are
// unobservable in state j come out missing.
inline Observation sim_observation(const EmissionBundle& b, std::size_t j, double state_value,
                                   const std::vector<double>& covariates, Rng& rng) {
  Observation x;
  x.covariates = covariates;
  for (const auto& c : b.components) {
    if (!c.observed_in(j)) {
      x.values.push_back(kMissing);
      continue;
    }
    const double cov = c.covariate ? covariates.at(*c.covariate) : 0.0;
    x.values.push_back(sim_emission(c.at(j), state_value, cov, c.state_in_mean, rng));
  }
  return x;
}

// ---- point processes --------------------------------------------------------

struct MmppPath {
  CtmcPath chain;
  std::vector<double> event_times;
  std::vector<int> event_states;
};

// Events by thinning a rate-lambda_max Poisson process against the state path.
inline MmppPath sim_mmpp(const Matrix& q, std::span<const double> rates, double horizon, Rng& rng,
                         std::optional<RowVector> delta = std::nullopt) {
  detail::require(static_cast<std::size_t>(q.rows()) == rates.size(), "sim_mmpp: one rate per state");
  double lmax = 0.0;
  for (double l : rates) {
    detail::require(l >= 0.0 && std::isfinite(l), "sim_mmpp: rates must be >= 0");
    lmax = std::max(lmax, l);
  }
  MmppPath out;
  out.chain = sim_ctmc(q, delta ? *delta : stationary_continuous(q), horizon, rng);
  if (lmax == 0.0) return out;
  std::exponential_distribution<double> wait(lmax);
  double t = 0.0;
  for (;;) {
    t += wait(rng);
    if (t >= horizon) break;
    const int s = out.chain.state_at(t);
    if (uniform01(rng) * lmax < rates[static_cast<std::size_t>(s)]) {
      out.event_times.push_back(t);
      out.event_states.push_back(s);
    }
  }
  return out;
}

// ---- whole-model simulation -------------------------------------------------

// Observation design for one simulated sequence.
struct SimDesign {
  std::size_t length = 0;          // discrete-time classes; also caps snapshot visits if > 0
  double horizon = 0.0;            // continuous-time classes
  std::vector<double> times;       // explicit observation times (continuous-time snapshot classes)
  double visit_rate = 1.0;         // Poisson visit times when `times` is empty; first visit at 0
  bool stop_when_absorbed = false;  // cthmm: end after the first visit in an absorbing state
  Matrix design;                   // hmm t.p.m. covariates, rows (1, z_t)
  std::vector<std::vector<double>> covariates;  // emission covariates per record
};

struct SimResult {
  Sequence seq;
  std::vector<int> states;     // latent state (grid cell for grid classes)
  std::vector<double> latent;  // latent continuous value (grid classes)
};

namespace detail {

inline int grid_cell(const Grid& g, double v) {
  const auto k = static_cast<long long>(std::floor((v - g.lower) / g.h));
  return static_cast<int>(std::clamp<long long>(k, 0, g.m - 1));
}

inline std::vector<double> visit_times(const SimDesign& d, Rng& rng) {
  if (!d.times.empty()) return d.times;
  detail::require(d.horizon > 0.0 && d.visit_rate > 0.0, "simulate: need a horizon and a visit rate");
  std::vector<double> t{0.0};
  std::exponential_distribution<double> gap(d.visit_rate);
  for (;;) {
    const double next = t.back() + gap(rng);
    if (next > d.horizon || (d.length > 0 && t.size() >= d.length)) break;
    t.push_back(next);
  }
  return t;
}

inline const std::vector<double>& covariates_at(const SimDesign& d, std::size_t t) {
  static const std::vector<double> none;
  return t < d.covariates.size() ? d.covariates[t] : none;
}

}  // namespace detail

inline SimResult simulate_sequence(const ModelSpec& spec_in, const Params& p, const SimDesign& d, Rng& rng) {
  const ModelSpec spec = resolve_grid(spec_in, p);
  const Evaluator ev(spec, p);
  SimResult r;
  const auto& b = p.emissions;
  auto record = [&](std::size_t t, int state, double value) {
    r.states.push_back(state);
    if (is_grid_class(spec.cls)) r.latent.push_back(value);
    r.seq.obs.push_back(sim_observation(b, static_cast<std::size_t>(state), value, detail::covariates_at(d, t), rng));
  };

  switch (spec.cls) {
    case ModelClass::hmm: {
      const std::size_t n = d.length;
      const bool cov = !spec.tpm_covariates.empty();
      if (cov) detail::require(d.design.rows() == static_cast<Eigen::Index>(n), "simulate: design rows must match the length");
      r.seq.design = d.design;
      int s = 0;
      for (std::size_t t = 0; t < n; ++t) {
        if (t == 0) {
          if (!cov) s = draw_index(ev.delta1(r.seq), rng);
          else {
            Sequence tmp;
            tmp.design = d.design;
            tmp.obs.resize(n);
            s = draw_index(ev.delta1(tmp), rng);
          }
        } else {
          const Matrix g = cov ? tpm_from_eta(eta_from_design(spec.n_states, p.beta, d.design.row(static_cast<Eigen::Index>(t))))
                               : p.gamma;
          s = draw_index(g.row(s), rng);
        }
        record(t, s, 0.0);
      }
      break;
    }
    case ModelClass::ssm_ar1: {
      const double sd0 = ar1_stationary_sd(p.ar1);
      std::normal_distribution<double> z(0.0, 1.0);
      double g = p.ar1.mu + sd0 * z(rng);
      for (std::size_t t = 0; t < d.length; ++t) {
        if (t > 0) g = p.ar1.mu + p.ar1.phi * (g - p.ar1.mu) + p.ar1.sigma * z(rng);
        r.latent.push_back(g);
        r.states.push_back(detail::grid_cell(ev.grid(), g));
        r.seq.obs.push_back(sim_observation(b, 0, g, detail::covariates_at(d, t), rng));
      }
      break;
    }
    case ModelClass::cthmm: {
      const auto times = detail::visit_times(d, rng);
      const double end = times.empty() ? 0.0 : times.back();
      const CtmcPath path = sim_ctmc(p.q, ev.delta1(r.seq), end, rng);
      for (std::size_t t = 0; t < times.size(); ++t) {
        const int s = path.state_at(times[t]);
        r.seq.times.push_back(times[t]);
        record(t, s, 0.0);
        if (d.stop_when_absorbed && spec.mask.absorbing(s)) break;
      }
      break;
    }
    case ModelClass::ctssm_ou: {
      const auto times = detail::visit_times(d, rng);
      const double sd0 = ou_stationary_sd(p.ou);
      double g = p.ou.mu + sd0 * std::normal_distribution<double>(0.0, 1.0)(rng);
      for (std::size_t t = 0; t < times.size(); ++t) {
        if (t > 0 && times[t] > times[t - 1]) g = ou_step(p.ou, g, times[t] - times[t - 1], rng);
        r.seq.times.push_back(times[t]);
        r.latent.push_back(g);
        r.states.push_back(detail::grid_cell(ev.grid(), g));
        r.seq.obs.push_back(sim_observation(b, 0, g, detail::covariates_at(d, t), rng));
      }
      break;
    }
    case ModelClass::mmpp:
    case ModelClass::mmmpp:
    case ModelClass::cox_ou_mmpp: {
      Matrix q;
      std::vector<double> rates;
      if (spec.cls == ModelClass::cox_ou_mmpp) {
        q = generator_approx(ou_tpm(ev.grid(), p.ou, spec.dt_star, spec.renormalize), spec.dt_star);
        for (double v : ev.grid().midpoints) rates.push_back(std::exp(v));
      } else {
        q = p.q;
        rates = p.rates;
      }
      const MmppPath path = sim_mmpp(q, rates, d.horizon, rng, ev.delta1(r.seq));
      for (std::size_t k = 0; k < path.event_times.size(); ++k) {
        const int s = path.event_states[k];
        const double v = spec.cls == ModelClass::cox_ou_mmpp ? ev.grid().midpoints[static_cast<std::size_t>(s)] : 0.0;
        r.seq.times.push_back(path.event_times[k]);
        r.states.push_back(s);
        if (spec.cls == ModelClass::cox_ou_mmpp) r.latent.push_back(v);
        if (b.empty()) r.seq.obs.emplace_back();
        else r.seq.obs.push_back(sim_observation(b, static_cast<std::size_t>(s), v, detail::covariates_at(d, k), rng));
      }
      break;
    }
  }
  for (std::size_t t = 0; t < r.seq.obs.size(); ++t) r.seq.rows.push_back(t);
  return r;
}

}  // namespace latmark
