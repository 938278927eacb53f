#pragma once

// Numerical maximum likelihood: quasi-Newton on the unconstrained working
// vector with central finite-difference gradients, Nelder-Mead fallback,
// and a finite-difference Hessian for Wald intervals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "latmark/model.hpp"
#include "latmark/parallel.hpp"
#include "latmark/params.hpp"

namespace latmark {

inline constexpr double kPenalty = 1e10;

struct FitOptions {
  int max_iterations = 500;
  double gradient_tol = 1e-5;   // infinity norm on the working scale
  double relative_tol = 1e-10;  // relative change of the objective
  double fd_step = 1e-6;        // gradient step, relative to max(1, |x|)
  double hessian_step = 1e-4;   // Hessian step, relative to max(1, |x|)
  bool fallback = true;         // Nelder-Mead after a stalled line search
  double level = 0.95;          // interval coverage
  int threads = 1;
};

struct FitResult {
  ModelSpec spec;  // grid bounds resolved
  Params estimates;
  std::vector<ParamBlock> blocks;  // natural-scale estimates
  Eigen::VectorXd working;         // unconstrained estimate
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string method;
  double gradient_norm = 0.0;
  std::vector<double> trace;  // objective (-loglik) at each accepted iterate
  std::optional<Eigen::MatrixXd> covariance;  // of `working`; empty if the Hessian is not positive definite
  std::vector<std::vector<std::optional<Interval>>> intervals;  // parallel to blocks; empty if unavailable
  std::size_t n_obs = 0;

  std::size_t n_params() const { return static_cast<std::size_t>(working.size()); }
  double aic() const { return -2.0 * loglik + 2.0 * static_cast<double>(n_params()); }
  double bic() const { return -2.0 * loglik + std::log(static_cast<double>(n_obs)) * static_cast<double>(n_params()); }
};

// Negative log-likelihood over the working vector of a model.
class Objective {
 public:
  Objective(ModelSpec spec, Params base, const Dataset& data, int threads)
      : spec_(std::move(spec)), base_(std::move(base)), blocks_(describe(spec_, base_)), data_(data), threads_(threads) {}

  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ModelSpec& spec() const { return spec_; }

  Params params_at(const Eigen::VectorXd& v) const { return assemble(spec_, base_, unpack(blocks_, v)); }

  // Throws on invalid parameters or zero likelihood.
  double exact(const Eigen::VectorXd& v, int threads) const {
    const Params p = params_at(v);
    return -log_likelihood(Evaluator(spec_, p), data_, threads);
  }

  // Penalised form used during the search.
  double operator()(const Eigen::VectorXd& v, int threads) const {
    try {
      const double f = exact(v, threads);
      return std::isfinite(f) ? f : kPenalty;
    } catch (const ZeroLikelihood&) {
      return kPenalty;
    } catch (const InvalidArgument&) {
      return kPenalty;
    } catch (const NonUniqueStationary&) {
      return kPenalty;
    }
  }
  double operator()(const Eigen::VectorXd& v) const { return (*this)(v, threads_); }

  // Central differences with step fd_step * max(1, |x_i|); the 2n
  // evaluations run concurrently.
  Eigen::VectorXd gradient(const Eigen::VectorXd& x, double fd_step) const {
    const Eigen::Index n = x.size();
    std::vector<double> vals(static_cast<std::size_t>(2 * n));
    const int inner = threads_ > 1 && n > 0 ? 1 : threads_;
    parallel_for(vals.size(), threads_, [&](std::size_t k) {
      const Eigen::Index i = static_cast<Eigen::Index>(k / 2);
      Eigen::VectorXd y = x;
      const double h = fd_step * std::max(1.0, std::abs(x(i)));
      y(i) += (k % 2 == 0) ? h : -h;
      vals[k] = (*this)(y, inner);
    });
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = fd_step * std::max(1.0, std::abs(x(i)));
      g(i) = (vals[static_cast<std::size_t>(2 * i)] - vals[static_cast<std::size_t>(2 * i + 1)]) / (2.0 * h);
    }
    return g;
  }

  // 1 / sqrt of the diagonal second differences; 1 where the curvature is
  // not positive.
  Eigen::VectorXd curvature_scale(const Eigen::VectorXd& x, double step) const {
    const Eigen::Index n = x.size();
    std::vector<double> vals(static_cast<std::size_t>(2 * n));
    const int inner = threads_ > 1 ? 1 : threads_;
    parallel_for(vals.size(), threads_, [&](std::size_t k) {
      const Eigen::Index i = static_cast<Eigen::Index>(k / 2);
      Eigen::VectorXd y = x;
      y(i) += ((k % 2 == 0) ? 1.0 : -1.0) * step * std::max(1.0, std::abs(x(i)));
      vals[k] = (*this)(y, inner);
    });
    const double f0 = (*this)(x);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = step * std::max(1.0, std::abs(x(i)));
      const double d = (vals[static_cast<std::size_t>(2 * i)] - 2.0 * f0 + vals[static_cast<std::size_t>(2 * i + 1)]) / (h * h);
      if (d > 0.0 && std::isfinite(d) && std::max(vals[static_cast<std::size_t>(2 * i)], vals[static_cast<std::size_t>(2 * i + 1)]) < kPenalty) {
        s(i) = std::clamp(1.0 / std::sqrt(d), 1e-6, 1e2);
      }
    }
    return s;
  }

  // Central second differences.
  Eigen::MatrixXd hessian(const Eigen::VectorXd& x, double step) const {
    const Eigen::Index n = x.size();
    Eigen::VectorXd h(n);
    for (Eigen::Index i = 0; i < n; ++i) h(i) = step * std::max(1.0, std::abs(x(i)));
    struct Probe {
      Eigen::Index i, j;
      int si, sj;
    };
    std::vector<Probe> probes;
    for (Eigen::Index i = 0; i < n; ++i) {
      probes.push_back({i, i, 1, 0});
      probes.push_back({i, i, -1, 0});
      for (Eigen::Index j = i + 1; j < n; ++j)
        for (int si : {1, -1})
          for (int sj : {1, -1}) probes.push_back({i, j, si, sj});
    }
    std::vector<double> vals(probes.size());
    const int inner = threads_ > 1 ? 1 : threads_;
    parallel_for(probes.size(), threads_, [&](std::size_t k) {
      const auto& p = probes[k];
      Eigen::VectorXd y = x;
      y(p.i) += p.si * h(p.i);
      if (p.i != p.j) y(p.j) += p.sj * h(p.j);
      vals[k] = (*this)(y, inner);
    });
    const double f0 = (*this)(x);
    Eigen::MatrixXd hess(n, n);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double fp = vals[k++], fm = vals[k++];
      hess(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double fpp = vals[k++], fpm = vals[k++], fmp = vals[k++], fmm = vals[k++];
        hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * h(i) * h(j));
      }
    }
    return hess;
  }

 private:
  ModelSpec spec_;
  Params base_;
  std::vector<ParamBlock> blocks_;
  const Dataset& data_;
  int threads_;
};

namespace detail {

// The minimiser sees z with x = origin + scale * z, so that one unit of z is
// roughly one standard error in every coordinate.
struct GslContext {
  const Objective* obj;
  double fd_step;
  Eigen::VectorXd origin;
  Eigen::VectorXd scale;

  Eigen::VectorXd to_x(const Eigen::VectorXd& z) const { return origin + scale.cwiseProduct(z); }
};

inline Eigen::VectorXd from_gsl(const gsl_vector* v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v->size));
  for (std::size_t i = 0; i < v->size; ++i) out(static_cast<Eigen::Index>(i)) = gsl_vector_get(v, i);
  return out;
}

inline void to_gsl(const Eigen::VectorXd& x, gsl_vector* v) {
  for (Eigen::Index i = 0; i < x.size(); ++i) gsl_vector_set(v, static_cast<std::size_t>(i), x(i));
}

inline double gsl_f(const gsl_vector* v, void* ctx) {
  const auto* c = static_cast<GslContext*>(ctx);
  return (*c->obj)(c->to_x(from_gsl(v)));
}

inline void gsl_df(const gsl_vector* v, void* ctx, gsl_vector* g) {
  const auto* c = static_cast<GslContext*>(ctx);
  to_gsl(c->scale.cwiseProduct(c->obj->gradient(c->to_x(from_gsl(v)), c->fd_step)), g);
}

inline void gsl_fdf(const gsl_vector* v, void* ctx, double* f, gsl_vector* g) {
  *f = gsl_f(v, ctx);
  gsl_df(v, ctx, g);
}

struct GslVector {
  explicit GslVector(const Eigen::VectorXd& x) : v(gsl_vector_alloc(static_cast<std::size_t>(x.size()))) { to_gsl(x, v); }
  ~GslVector() { gsl_vector_free(v); }
  GslVector(const GslVector&) = delete;
  GslVector& operator=(const GslVector&) = delete;
  gsl_vector* v;
};

inline bool relative_change_small(double prev, double cur, double tol) {
  return std::abs(prev - cur) <= tol * std::max(1.0, std::abs(cur));
}

}  // namespace detail

// Fills covariance and intervals from a Hessian of the objective at the optimum.
inline void attach_intervals(FitResult& r, const Eigen::MatrixXd& hess, double level) {
  r.covariance.reset();
  r.intervals.clear();
  if (r.working.size() == 0 || !hess.allFinite()) return;
  const Eigen::LLT<Eigen::MatrixXd> llt(hess);
  if (llt.info() != Eigen::Success) return;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
  if (!(es.eigenvalues().minCoeff() > 0.0)) return;
  r.covariance = llt.solve(Eigen::MatrixXd::Identity(hess.rows(), hess.cols()));
  r.intervals = wald_intervals(r.blocks, r.working, *r.covariance, level);
}

inline void attach_intervals(FitResult& r, const Objective& obj, const FitOptions& opt) {
  attach_intervals(r, r.working.size() ? obj.hessian(r.working, opt.hessian_step) : Eigen::MatrixXd(), opt.level);
}

inline FitResult fit_mle(const ModelSpec& spec_in, const Dataset& data, const Params& init, const FitOptions& opt = {}) {
  const ModelSpec spec = resolve_grid(spec_in, init);
  validate(spec, init);
  detail::require(!data.empty(), "fit: no data");
  const Objective obj(spec, init, data, opt.threads);

  FitResult r;
  r.spec = spec;
  for (const auto& s : data) r.n_obs += s.length();
  Eigen::VectorXd x = pack(obj.blocks());
  try {
    obj.exact(x, opt.threads);
  } catch (const ZeroLikelihood& e) {
    detail::invalid(std::string("initial parameters give zero likelihood (") + e.what() + ")");
  }

  const auto n = static_cast<std::size_t>(x.size());
  double fcur = obj(x);
  r.trace.push_back(fcur);
  int iter = 0;

  if (n > 0) {
    gsl_set_error_handler_off();
    r.method = "bfgs2";
    bool stalled = false;
    int stalls = 0;
    // rounds are capped so the scaling is re-estimated as the iterate moves;
    // a stalled line search also starts a fresh round
    const int round_cap = std::max(30, 5 * static_cast<int>(n));
    while (!r.converged && iter < opt.max_iterations) {
      detail::GslContext ctx{&obj, opt.fd_step, x, obj.curvature_scale(x, opt.hessian_step)};
      gsl_multimin_function_fdf fdf{&detail::gsl_f, &detail::gsl_df, &detail::gsl_fdf, n, &ctx};
      detail::GslVector start(Eigen::VectorXd::Zero(x.size()));
      gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
      gsl_multimin_fdfminimizer_set(s, &fdf, start.v, 1.0, 0.1);
      const double round_start = fcur;
      stalled = false;
      for (int k = 0; k < round_cap && iter < opt.max_iterations; ++k) {
        ++iter;
        const int status = gsl_multimin_fdfminimizer_iterate(s);
        const double fnew = s->f;
        if (fnew <= fcur) {
          const bool small = detail::relative_change_small(fcur, fnew, opt.relative_tol);
          x = ctx.to_x(detail::from_gsl(s->x));
          if (fnew < fcur) r.trace.push_back(fnew);
          fcur = fnew;
          r.gradient_norm = detail::from_gsl(s->gradient).cwiseQuotient(ctx.scale).cwiseAbs().maxCoeff();
          if (r.gradient_norm <= opt.gradient_tol || (small && status == GSL_SUCCESS)) {
            r.converged = true;
            break;
          }
        }
        if (status != GSL_SUCCESS) {
          stalled = true;
          break;
        }
      }
      gsl_multimin_fdfminimizer_free(s);
      if (r.converged) break;
      if (stalled) {
        r.gradient_norm = obj.gradient(x, opt.fd_step).cwiseAbs().maxCoeff();
        r.converged = r.gradient_norm <= opt.gradient_tol;
        if (++stalls >= 3) break;
      }
      if (!(fcur < round_start)) break;
    }

    if (stalled && !r.converged && opt.fallback && iter < opt.max_iterations) {
      r.method = "bfgs2+nmsimplex2";
      detail::GslContext ctx{&obj, opt.fd_step, x, obj.curvature_scale(x, opt.hessian_step)};
      gsl_multimin_function fn{&detail::gsl_f, n, &ctx};
      detail::GslVector from(Eigen::VectorXd::Zero(x.size()));
      detail::GslVector steps(Eigen::VectorXd::Constant(x.size(), 0.5));
      gsl_multimin_fminimizer* nm = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
      gsl_multimin_fminimizer_set(nm, &fn, from.v, steps.v);
      while (iter < opt.max_iterations) {
        ++iter;
        if (gsl_multimin_fminimizer_iterate(nm) != GSL_SUCCESS) break;
        if (nm->fval < fcur) {
          fcur = nm->fval;
          x = ctx.to_x(detail::from_gsl(nm->x));
          r.trace.push_back(fcur);
        }
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm), 1e-8) == GSL_SUCCESS) {
          r.converged = true;
          break;
        }
      }
      gsl_multimin_fminimizer_free(nm);
      r.gradient_norm = obj.gradient(x, opt.fd_step).cwiseAbs().maxCoeff();
      r.converged = r.converged || r.gradient_norm <= opt.gradient_tol;
    }
  } else {
    r.method = "none";
    r.converged = true;
  }

  // One Newton step with the finite-difference Hessian, kept if it helps.
  Eigen::MatrixXd hess;
  if (n > 0) {
    hess = obj.hessian(x, opt.hessian_step);
    const Eigen::LLT<Eigen::MatrixXd> llt(hess);
    if (hess.allFinite() && llt.info() == Eigen::Success) {
      const Eigen::VectorXd xn = x - llt.solve(obj.gradient(x, opt.fd_step));
      const double fn = obj(xn);
      if (fn < fcur) {
        x = xn;
        fcur = fn;
        r.trace.push_back(fn);
        r.gradient_norm = obj.gradient(x, opt.fd_step).cwiseAbs().maxCoeff();
      }
    }
  }

  r.iterations = iter;
  r.working = x;
  r.blocks = unpack(obj.blocks(), x);
  r.estimates = assemble(spec, init, r.blocks);
  r.loglik = log_likelihood(Evaluator(spec, r.estimates), data, opt.threads);
  attach_intervals(r, hess, opt.level);
  return r;
}

}  // namespace latmark
