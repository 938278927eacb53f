#pragma once

// Scaled forward algorithm, Viterbi decoding and one-step-ahead forecasts.
// Everything here is generic over the sequence of Omega^(tau) and P(x) inputs,
// so one implementation serves all model classes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "latmark/emissions.hpp"
#include "latmark/errors.hpp"
#include "latmark/linalg.hpp"

namespace latmark {

// delta1, Omega^(2..T) and diag(P(x_1..x_T)), fully materialised.
struct LikelihoodInputs {
  RowVector delta1;
  std::vector<Matrix> omegas;    // T - 1 entries
  std::vector<RowVector> pdiags;  // T entries

  std::size_t length() const { return pdiags.size(); }

  void validate() const {
    detail::require(!pdiags.empty(), "likelihood inputs: need at least one observation");
    detail::require(omegas.size() + 1 == pdiags.size(), "likelihood inputs: need T - 1 transition operators");
    const Eigen::Index n = delta1.size();
    detail::require(n > 0 && delta1.allFinite() && (delta1.array() >= 0.0).all(),
                    "likelihood inputs: delta1 must be finite and >= 0");
    for (const auto& o : omegas) {
      detail::require(o.rows() == n && o.cols() == n, "likelihood inputs: operator dimension mismatch");
      detail::require(o.allFinite() && (o.array() >= 0.0).all(), "likelihood inputs: operators must be finite and >= 0");
    }
    for (const auto& p : pdiags) {
      detail::require(p.size() == n, "likelihood inputs: emission diagonal dimension mismatch");
      detail::require(p.allFinite() && (p.array() >= 0.0).all(), "likelihood inputs: emission diagonals must be finite and >= 0");
    }
  }
};

// Streaming form of the scaled recursion: phi holds the normalised forward
// weights after the last consumed observation.
class ForwardFilter {
 public:
  void start(const RowVector& delta1, const RowVector& pdiag) {
    steps_ = 0;
    loglik_ = 0.0;
    absorb(delta1.cwiseProduct(pdiag));
  }

  void advance(const Matrix& omega, const RowVector& pdiag) {
    RowVector foo = phi_ * omega;
    foo.array() *= pdiag.array();
    absorb(foo);
  }

  // Normalised state weights one step ahead, before seeing the next record.
  RowVector predict(const Matrix& omega) const {
    RowVector w = phi_ * omega;
    const double s = w.sum();
    detail::require(s > 0.0 && std::isfinite(s), "predict: operator annihilates the current weights");
    return w / s;
  }

  double log_likelihood() const { return loglik_; }
  const RowVector& weights() const { return phi_; }
  std::size_t steps() const { return steps_; }

 private:
  void absorb(RowVector foo) {
    const double s = foo.sum();
    if (!(s > 0.0) || !std::isfinite(s)) throw ZeroLikelihood(steps_);
    loglik_ += std::log(s);
    phi_ = foo / s;
    ++steps_;
  }

  RowVector phi_;
  double loglik_ = 0.0;
  std::size_t steps_ = 0;
};

// omega_at(tau) is Omega into observation tau (tau = 1..T-1, 0-based),
// diag_at(tau) the emission diagonal of observation tau.
template <class OmegaAt, class DiagAt>
double log_likelihood(const RowVector& delta1, std::size_t length, OmegaAt&& omega_at, DiagAt&& diag_at) {
  detail::require(length > 0, "log_likelihood: empty sequence");
  ForwardFilter f;
  f.start(delta1, diag_at(std::size_t{0}));
  for (std::size_t tau = 1; tau < length; ++tau) f.advance(omega_at(tau), diag_at(tau));
  return f.log_likelihood();
}

inline double log_likelihood(const LikelihoodInputs& inp) {
  inp.validate();
  return log_likelihood(
      inp.delta1, inp.length(), [&](std::size_t tau) -> const Matrix& { return inp.omegas[tau - 1]; },
      [&](std::size_t tau) -> const RowVector& { return inp.pdiags[tau]; });
}

struct DecodeResult {
  std::vector<int> states;  // 0-based state indices
  double log_joint = 0.0;
};

namespace detail {

inline Eigen::ArrayXXd log_of(const Matrix& m) { return m.array().log(); }

}  // namespace detail

// Most probable state sequence in log space. Ties go to the lowest index.
template <class OmegaAt, class DiagAt>
DecodeResult viterbi(const RowVector& delta1, std::size_t length, OmegaAt&& omega_at, DiagAt&& diag_at) {
  detail::require(length > 0, "viterbi: empty sequence");
  const Eigen::Index n = delta1.size();
  std::vector<int> back(length * static_cast<std::size_t>(n), 0);

  Eigen::ArrayXd xi = delta1.transpose().array().log() + diag_at(std::size_t{0}).transpose().array().log();
  if (!(xi.maxCoeff() > kNegInf)) throw ZeroLikelihood(0);

  Eigen::ArrayXd next(n);
  Matrix prev;
  Eigen::ArrayXXd lo;
  for (std::size_t tau = 1; tau < length; ++tau) {
    const Matrix& om = omega_at(tau);
    if (tau == 1 || om.rows() != prev.rows() || om != prev) {
      prev = om;
      lo = detail::log_of(om);
    }
    const Eigen::ArrayXd lp = diag_at(tau).transpose().array().log();
    int* bp = back.data() + tau * static_cast<std::size_t>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double best = kNegInf;
      int arg = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = xi(i) + lo(i, j);
        if (v > best) {
          best = v;
          arg = static_cast<int>(i);
        }
      }
      next(j) = best + lp(j);
      bp[j] = arg;
    }
    xi = next;
    if (!(xi.maxCoeff() > kNegInf)) throw ZeroLikelihood(tau);
  }

  DecodeResult out;
  out.states.assign(length, 0);
  Eigen::Index arg = 0;
  double best = xi(0);
  for (Eigen::Index j = 1; j < n; ++j) {
    if (xi(j) > best) {
      best = xi(j);
      arg = j;
    }
  }
  out.log_joint = best;
  out.states[length - 1] = static_cast<int>(arg);
  for (std::size_t tau = length - 1; tau > 0; --tau) {
    out.states[tau - 1] = back[tau * static_cast<std::size_t>(n) + static_cast<std::size_t>(out.states[tau])];
  }
  return out;
}

inline DecodeResult viterbi(const LikelihoodInputs& inp) {
  inp.validate();
  return viterbi(
      inp.delta1, inp.length(), [&](std::size_t tau) -> const Matrix& { return inp.omegas[tau - 1]; },
      [&](std::size_t tau) -> const RowVector& { return inp.pdiags[tau]; });
}

// One-step-ahead predictive distribution evaluated on a grid of candidate
// observations.
struct Forecast {
  RowVector state_weights;     // normalize(phi_T * Omega)
  std::vector<double> points;  // evaluation grid, increasing
  std::vector<double> density;  // sum_j w_j f_j(x)
  std::vector<double> weights;  // density times trapezoid cell width, normalised

  // Smallest grid point whose accumulated weight reaches `level`.
  double quantile(double level) const {
    detail::require(level > 0.0 && level < 1.0, "quantile: level must be in (0, 1)");
    double acc = 0.0;
    for (std::size_t k = 0; k < points.size(); ++k) {
      acc += weights[k];
      if (acc >= level) return points[k];
    }
    return points.back();
  }
};

// state_density(j, x) gives f_j(x).
template <class StateDensity>
Forecast forecast(const RowVector& state_weights, std::span<const double> eval_points, StateDensity&& state_density) {
  detail::require(!eval_points.empty(), "forecast: empty evaluation grid");
  detail::require(std::is_sorted(eval_points.begin(), eval_points.end()), "forecast: evaluation grid must be sorted");
  Forecast out;
  out.state_weights = state_weights;
  out.points.assign(eval_points.begin(), eval_points.end());
  const std::size_t k_pts = eval_points.size();
  out.density.assign(k_pts, 0.0);
  for (Eigen::Index j = 0; j < state_weights.size(); ++j) {
    const double w = state_weights(j);
    if (w == 0.0) continue;
    for (std::size_t k = 0; k < k_pts; ++k) out.density[k] += w * state_density(static_cast<std::size_t>(j), eval_points[k]);
  }
  out.weights.assign(k_pts, 0.0);
  if (k_pts == 1) {
    out.weights[0] = 1.0;
    return out;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < k_pts; ++k) {
    const double left = k > 0 ? eval_points[k] - eval_points[k - 1] : 0.0;
    const double right = k + 1 < k_pts ? eval_points[k + 1] - eval_points[k] : 0.0;
    out.weights[k] = out.density[k] * 0.5 * (left + right);
    total += out.weights[k];
  }
  detail::require(total > 0.0 && std::isfinite(total), "forecast: predictive density vanishes on the grid");
  for (auto& w : out.weights) w /= total;
  return out;
}

// Runs the filter through `inp`, steps once with `next_omega` and mixes the
// single-component emission bundle over the predicted state weights.
inline Forecast forecast(const LikelihoodInputs& inp, const Matrix& next_omega, std::span<const double> eval_points,
                         const EmissionBundle& bundle, std::span<const double> state_values,
                         const std::vector<double>& covariates = {}) {
  inp.validate();
  detail::require(bundle.components.size() == 1, "forecast: needs a single-component emission bundle");
  ForwardFilter f;
  f.start(inp.delta1, inp.pdiags[0]);
  for (std::size_t tau = 1; tau < inp.length(); ++tau) f.advance(inp.omegas[tau - 1], inp.pdiags[tau]);
  const RowVector w = f.predict(next_omega);
  const auto& c = bundle.components.front();
  const double cov = c.covariate ? covariates.at(*c.covariate) : 0.0;
  return forecast(w, eval_points, [&](std::size_t j, double x) {
    return density(c.at(j), x, state_values[j], cov, c.state_in_mean);
  });
}

}  // namespace latmark
