#pragma once

// Dense kernels shared by every model class: matrix exponential, stationary
// distributions and the inverse multinomial logistic link.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>

#include "latmark/errors.hpp"

namespace latmark {

using Matrix = Eigen::MatrixXd;
// State-indexed row vectors: initial distributions, forward weights, emission
// diagonals.
using RowVector = Eigen::RowVectorXd;

inline constexpr double kStochasticTol = 1e-10;

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

inline bool is_transition_matrix(const Matrix& g, double tol = kStochasticTol) {
  if (g.rows() != g.cols() || g.rows() == 0 || !g.allFinite()) return false;
  if ((g.array() < -tol).any() || (g.array() > 1.0 + tol).any()) return false;
  return ((g.rowwise().sum().array() - 1.0).abs() <= tol).all();
}

inline bool is_generator(const Matrix& q, double tol = kStochasticTol) {
  if (q.rows() != q.cols() || q.rows() == 0 || !q.allFinite()) return false;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      if (i != j && q(i, j) < 0.0) return false;
    }
    if (q(i, i) > 0.0) return false;
  }
  return (q.rowwise().sum().array().abs() <= tol).all();
}

namespace detail {

// Degree-13 Pade numerator/denominator coefficients and the matching
// backward-error threshold for the 1-norm (Higham 2005).
inline constexpr std::array<double, 14> kPade13 = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0,  129060195264000.0,   10559470521600.0,
    670442572800.0,      33522128640.0,       1323241920.0,
    40840800.0,          960960.0,            16380.0,
    182.0,               1.0};
inline constexpr double kTheta13 = 5.371920351148152;

inline double norm1(const Matrix& a) { return a.cwiseAbs().colwise().sum().maxCoeff(); }

}  // namespace detail

// exp(A) by scaling and squaring with a degree-13 Pade approximant.
// Entries in (-1e-12, 0) are clamped to zero; nothing is renormalized.
inline Matrix expm(const Matrix& a) {
  detail::require(a.rows() == a.cols() && a.rows() > 0, "expm: matrix must be square and non-empty");
  detail::require(a.allFinite(), "expm: matrix has non-finite entries");

  const Eigen::Index n = a.rows();
  const double nrm = detail::norm1(a);
  int s = 0;
  if (nrm > detail::kTheta13) {
    s = static_cast<int>(std::ceil(std::log2(nrm / detail::kTheta13)));
  }
  const Matrix as = a / std::ldexp(1.0, s);

  const auto& b = detail::kPade13;
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = as * as;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;

  const Matrix u_inner = b[13] * a6 + b[11] * a4 + b[9] * a2;
  const Matrix u = as * (a6 * u_inner + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Matrix v_inner = b[12] * a6 + b[10] * a4 + b[8] * a2;
  const Matrix v = a6 * v_inner + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < s; ++k) r = r * r;

  for (Eigen::Index k = 0; k < r.size(); ++k) {
    double& x = r.data()[k];
    if (x < 0.0 && x > -1e-12) x = 0.0;
  }
  return r;
}

namespace detail {

// Solves delta * M = 0 with sum(delta) = 1 by replacing the last equation
// with the normalisation row. M is (Gamma - I) or Q.
inline RowVector solve_stationary(const Matrix& m, const char* who) {
  const Eigen::Index n = m.rows();
  Matrix sys = m.transpose();
  sys.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;

  Eigen::PartialPivLU<Matrix> lu(sys);
  const double rc = lu.rcond();
  if (!(rc > 1e-12)) {
    throw NonUniqueStationary(std::string(who) + ": stationary distribution is not unique");
  }
  Eigen::VectorXd delta = lu.solve(rhs);
  return delta.transpose();
}

}  // namespace detail

// delta * Gamma = delta, sum(delta) = 1.
inline RowVector stationary_discrete(const Matrix& gamma) {
  detail::require(gamma.rows() == gamma.cols() && gamma.rows() > 0,
                  "stationary_discrete: matrix must be square");
  detail::require(gamma.allFinite(), "stationary_discrete: non-finite entries");
  const Matrix m = gamma - Matrix::Identity(gamma.rows(), gamma.cols());
  return detail::solve_stationary(m, "stationary_discrete");
}

// delta * Q = 0, sum(delta) = 1.
inline RowVector stationary_continuous(const Matrix& q) {
  detail::require(q.rows() == q.cols() && q.rows() > 0,
                  "stationary_continuous: matrix must be square");
  detail::require(q.allFinite(), "stationary_continuous: non-finite entries");
  return detail::solve_stationary(q, "stationary_continuous");
}

// Row-wise softmax of a predictor row. Max-subtracted so large predictors
// saturate instead of overflowing.
inline RowVector softmax_row(const RowVector& eta) {
  const double mx = eta.maxCoeff();
  RowVector e = (eta.array() - mx).exp();
  return e / e.sum();
}

// Inverse multinomial logistic link: gamma_ij = exp(eta_ij) / sum_k exp(eta_ik)
// with eta_ii = 0 as the reference category.
inline Matrix tpm_from_eta(const Matrix& eta) {
  detail::require(eta.rows() == eta.cols() && eta.rows() > 0, "tpm_from_eta: eta must be square");
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    detail::require(eta(i, i) == 0.0, "tpm_from_eta: diagonal of eta must be exactly zero");
  }
  Matrix gamma(eta.rows(), eta.cols());
  for (Eigen::Index i = 0; i < eta.rows(); ++i) gamma.row(i) = softmax_row(eta.row(i));
  return gamma;
}

// Inverse of tpm_from_eta on strictly positive rows: eta_ij = log(gamma_ij / gamma_ii).
inline Matrix eta_from_tpm(const Matrix& gamma) {
  detail::require(gamma.rows() == gamma.cols() && gamma.rows() > 0, "eta_from_tpm: gamma must be square");
  Matrix eta(gamma.rows(), gamma.cols());
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    detail::require(gamma(i, i) > 0.0, "eta_from_tpm: diagonal entries must be positive");
    for (Eigen::Index j = 0; j < gamma.cols(); ++j) {
      eta(i, j) = (i == j) ? 0.0 : std::log(gamma(i, j) / gamma(i, i));
    }
  }
  return eta;
}

}  // namespace latmark
