#pragma once

// Midpoint discretisation of continuous state processes (AR(1), OU) and the
// Cox-by-MMPP generator approximation.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "latmark/errors.hpp"
#include "latmark/linalg.hpp"

namespace latmark {

struct Grid {
  int m = 0;
  double lower = 0.0;
  double upper = 0.0;
  double h = 0.0;
  std::vector<double> midpoints;
};

struct AR1Params {
  double phi = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
};

struct OUParams {
  double theta = 1.0;
  double mu = 0.0;
  double sigma = 1.0;
};

inline void validate(const AR1Params& p) {
  detail::require(std::abs(p.phi) < 1.0, "AR(1): |phi| must be < 1");
  detail::require(p.sigma > 0.0 && std::isfinite(p.sigma), "AR(1): sigma must be > 0");
  detail::require(std::isfinite(p.mu), "AR(1): mu must be finite");
}

inline void validate(const OUParams& p) {
  detail::require(p.theta > 0.0 && std::isfinite(p.theta), "OU: theta must be > 0");
  detail::require(p.sigma > 0.0 && std::isfinite(p.sigma), "OU: sigma must be > 0");
  detail::require(std::isfinite(p.mu), "OU: mu must be finite");
}

inline double ar1_stationary_sd(const AR1Params& p) { return p.sigma / std::sqrt(1.0 - p.phi * p.phi); }
inline double ou_stationary_sd(const OUParams& p) { return p.sigma / std::sqrt(2.0 * p.theta); }

inline Grid build_grid(double lower, double upper, int m) {
  detail::require(std::isfinite(lower) && std::isfinite(upper) && lower < upper,
                  "build_grid: need finite bounds with lower < upper");
  detail::require(m >= 2, "build_grid: m must be >= 2");
  Grid g;
  g.m = m;
  g.lower = lower;
  g.upper = upper;
  g.h = (upper - lower) / m;
  g.midpoints.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) g.midpoints[static_cast<std::size_t>(i)] = lower + (i + 0.5) * g.h;
  return g;
}

namespace detail {

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Row i holds h * N(b_j*; cond_mean(b_i*), sd^2). Along a row the Gaussian
// on an even grid obeys g_{j+1} = g_j r_j with r_{j+1} = r_j exp(-h^2 / sd^2),
// so each row costs a handful of exp calls walking out from its peak.
template <class MeanFn>
Matrix gaussian_kernel(const Grid& g, MeanFn cond_mean, double sd) {
  const Eigen::Index m = g.m;
  const double c = g.h / (sd * std::sqrt(2.0 * std::numbers::pi));
  const double inv2v = 0.5 / (sd * sd);
  const double step = std::exp(-g.h * g.h / (sd * sd));
  Matrix out = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double mean = cond_mean(g.midpoints[static_cast<std::size_t>(i)]);
    const double pos = (mean - g.lower) / g.h - 0.5;
    const Eigen::Index j0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(std::clamp(pos, -1.0, double(m)))), 0, m - 1);
    const double d0 = g.midpoints[static_cast<std::size_t>(j0)] - mean;
    const double peak = c * std::exp(-d0 * d0 * inv2v);
    out(i, j0) = peak;
    double v = peak;
    double r = std::exp(-(2.0 * d0 * g.h + g.h * g.h) * inv2v);
    for (Eigen::Index j = j0 + 1; j < m && v > 0.0; ++j) {
      v *= r;
      r *= step;
      out(i, j) = v;
    }
    v = peak;
    r = std::exp((2.0 * d0 * g.h - g.h * g.h) * inv2v);
    for (Eigen::Index j = j0 - 1; j >= 0 && v > 0.0; --j) {
      v *= r;
      r *= step;
      out(i, j) = v;
    }
  }
  return out;
}

inline void renormalize_rows(Matrix& k) {
  for (Eigen::Index i = 0; i < k.rows(); ++i) {
    const double s = k.row(i).sum();
    if (s > 0.0) k.row(i) /= s;
  }
}

inline RowVector gaussian_weights(const Grid& g, double mean, double sd) {
  RowVector w(g.m);
  for (int i = 0; i < g.m; ++i) w(i) = g.h * normal_pdf(g.midpoints[static_cast<std::size_t>(i)], mean, sd);
  const double s = w.sum();
  detail::require(s > 0.0, "stationary weights vanish on the grid; widen the bounds");
  return w / s;
}

}  // namespace detail

// Largest probability mass lost off the grid over all rows, i.e. max_i (1 - row sum).
inline double truncation_mass(const Matrix& kernel) {
  return std::max(0.0, (1.0 - kernel.rowwise().sum().array()).maxCoeff());
}

inline Matrix ar1_tpm(const Grid& g, const AR1Params& p, bool renormalize = false) {
  validate(p);
  Matrix k = detail::gaussian_kernel(
      g, [&](double b) { return p.phi * (b - p.mu) + p.mu; }, p.sigma);
  if (renormalize) detail::renormalize_rows(k);
  return k;
}

inline Matrix ou_tpm(const Grid& g, const OUParams& p, double dt, bool renormalize = false) {
  validate(p);
  detail::require(dt > 0.0 && std::isfinite(dt), "ou_tpm: dt must be > 0");
  const double decay = std::exp(-p.theta * dt);
  const double var = p.sigma * p.sigma * -std::expm1(-2.0 * p.theta * dt) / (2.0 * p.theta);
  Matrix k = detail::gaussian_kernel(
      g, [&](double b) { return decay * b + p.mu * (1.0 - decay); }, std::sqrt(var));
  if (renormalize) detail::renormalize_rows(k);
  return k;
}

inline RowVector ar1_initial(const Grid& g, const AR1Params& p) {
  validate(p);
  return detail::gaussian_weights(g, p.mu, ar1_stationary_sd(p));
}

inline RowVector ou_initial(const Grid& g, const OUParams& p) {
  validate(p);
  return detail::gaussian_weights(g, p.mu, ou_stationary_sd(p));
}

// Generator approximation from a short-step kernel: off-diagonals
// gamma_ij(dt*) / dt*, diagonal reset to minus the off-diagonal row sum.
inline Matrix generator_approx(const Matrix& gamma_star, double dt_star) {
  detail::require(dt_star > 0.0 && std::isfinite(dt_star), "generator_approx: dt_star must be > 0");
  detail::require(gamma_star.rows() == gamma_star.cols() && gamma_star.rows() > 0,
                  "generator_approx: kernel must be square");
  const Eigen::Index m = gamma_star.rows();
  Matrix q(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double off = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == j) continue;
      detail::require(gamma_star(i, j) >= 0.0, "generator_approx: negative off-diagonal entry");
      q(i, j) = gamma_star(i, j) / dt_star;
      off += q(i, j);
    }
    q(i, i) = -off;
  }
  return q;
}

}  // namespace latmark
