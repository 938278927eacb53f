#pragma once

// Per-step transition operators Omega for each model class.

#include <cmath>
#include <span>
#include <vector>

#include "latmark/errors.hpp"
#include "latmark/linalg.hpp"

namespace latmark {

// Marks which off-diagonal rates are free. Masked cells are structural zeros;
// a row with no free cells is absorbing.
class GeneratorMask {
 public:
  GeneratorMask() = default;
  explicit GeneratorMask(int n, bool all_free = true)
      : n_(n), free_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), all_free) {
    detail::require(n > 0, "GeneratorMask: n must be positive");
    for (int i = 0; i < n; ++i) free_[idx(i, i)] = false;
  }

  int size() const { return n_; }
  bool is_free(int i, int j) const { return i != j && free_[idx(i, j)]; }
  void set_free(int i, int j, bool f) {
    detail::require(i >= 0 && j >= 0 && i < n_ && j < n_, "GeneratorMask: index out of range");
    if (i != j) free_[idx(i, j)] = f;
  }

  std::size_t free_count() const {
    std::size_t c = 0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) c += is_free(i, j) ? 1u : 0u;
    return c;
  }

  bool absorbing(int i) const {
    for (int j = 0; j < n_; ++j)
      if (is_free(i, j)) return false;
    return true;
  }

 private:
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j); }

  int n_ = 0;
  std::vector<bool> free_;
};

// Fills free cells row-major with `rates` (natural scale, >= 0) and sets the
// diagonal to the negative row sum.
inline Matrix generator_from_rates(const GeneratorMask& mask, std::span<const double> rates) {
  detail::require(rates.size() == mask.free_count(), "generator: rate count does not match the mask");
  const int n = mask.size();
  Matrix q = Matrix::Zero(n, n);
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!mask.is_free(i, j)) continue;
      const double r = rates[k++];
      detail::require(r >= 0.0 && std::isfinite(r), "generator: rates must be finite and >= 0");
      q(i, j) = r;
      off += r;
    }
    q(i, i) = -off;
  }
  return q;
}

inline Matrix generator_from_params(const GeneratorMask& mask, std::span<const double> log_rates) {
  detail::require(log_rates.size() == mask.free_count(), "generator_from_params: length mismatch with mask");
  std::vector<double> rates(log_rates.size());
  for (std::size_t k = 0; k < rates.size(); ++k) rates[k] = std::exp(log_rates[k]);
  return generator_from_rates(mask, rates);
}

// Free rates of a generator in mask order.
inline std::vector<double> rates_from_generator(const GeneratorMask& mask, const Matrix& q) {
  std::vector<double> out;
  for (int i = 0; i < mask.size(); ++i)
    for (int j = 0; j < mask.size(); ++j)
      if (mask.is_free(i, j)) out.push_back(q(i, j));
  return out;
}

// Gamma(dt) = exp(Q dt).
inline Matrix omega_cthmm(const Matrix& q, double dt) {
  detail::require(dt >= 0.0 && std::isfinite(dt), "omega_cthmm: dt must be >= 0");
  detail::require(q.rows() == q.cols(), "omega_cthmm: generator must be square");
  if (dt == 0.0) return Matrix::Identity(q.rows(), q.cols());
  return expm(q * dt);
}

// exp((Q - Lambda) y), post-multiplied by Lambda for an observed arrival.
// Not row-stochastic: rows hold joint no-arrival/transition probabilities.
inline Matrix omega_mmpp(const Matrix& q, std::span<const double> rates, double y, bool with_rate_factor = true) {
  detail::require(y > 0.0 && std::isfinite(y), "omega_mmpp: waiting time must be > 0");
  detail::require(q.rows() == q.cols() && static_cast<std::size_t>(q.rows()) == rates.size(),
                  "omega_mmpp: dimension mismatch");
  Matrix a = q;
  for (Eigen::Index j = 0; j < a.rows(); ++j) {
    detail::require(rates[static_cast<std::size_t>(j)] >= 0.0, "omega_mmpp: rates must be >= 0");
    a(j, j) -= rates[static_cast<std::size_t>(j)];
  }
  Matrix out = expm(a * y);
  if (with_rate_factor) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) *= rates[static_cast<std::size_t>(j)];
  }
  return out;
}

// Predictor matrix for one design row: eta_ij = beta_(ij) . z with (ij)
// running row-major over off-diagonal pairs, eta_ii = 0.
inline Matrix eta_from_design(int n, const Matrix& beta, const Eigen::RowVectorXd& z) {
  Matrix eta = Matrix::Zero(n, n);
  Eigen::Index r = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) eta(i, j) = beta.row(r++).dot(z);
  return eta;
}

inline int states_from_offdiag_count(Eigen::Index rows) {
  int n = 1;
  while (static_cast<Eigen::Index>(n) * (n - 1) < rows) ++n;
  detail::require(static_cast<Eigen::Index>(n) * (n - 1) == rows,
                  "beta must have N(N-1) rows, one per off-diagonal pair");
  return n;
}

// Gamma^(t) = tpm_from_eta(eta^(t)) for each row t of the design matrix.
// beta is N(N-1) x p; covariates is T x p (first column the intercept).
inline std::vector<Matrix> hmm_tpm_sequence(const Matrix& beta, const Matrix& covariates) {
  detail::require(beta.cols() == covariates.cols(), "hmm_tpm_sequence: beta and design widths differ");
  const int n = states_from_offdiag_count(beta.rows());
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(covariates.rows()));
  for (Eigen::Index t = 0; t < covariates.rows(); ++t) {
    out.push_back(tpm_from_eta(eta_from_design(n, beta, covariates.row(t))));
  }
  return out;
}

}  // namespace latmark
