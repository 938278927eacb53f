#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "latmark/fit.hpp"
#include "latmark/simulate.hpp"

using namespace latmark;

namespace {

Params gaussian_hmm(const std::vector<double>& means, const std::vector<double>& sds, const Matrix& gamma) {
  Params p;
  p.gamma = gamma;
  EmissionComponent c{"x", {}, {}, false};
  for (std::size_t j = 0; j < means.size(); ++j) c.per_state.push_back(Normal{means[j], sds[j]});
  p.emissions.components.push_back(c);
  return p;
}

Sequence plain_sequence(const std::vector<double>& xs) {
  Sequence s;
  for (double x : xs) s.obs.push_back(Observation{{x}, {}});
  return s;
}

double block_value(const FitResult& r, const std::string& label) {
  for (const auto& b : r.blocks)
    for (std::size_t k = 0; k < b.labels.size(); ++k)
      if (b.labels[k] == label) return b.values[k];
  ADD_FAILURE() << "no parameter " << label;
  return NAN;
}

std::optional<Interval> block_interval(const FitResult& r, const std::string& label) {
  for (std::size_t i = 0; i < r.blocks.size(); ++i)
    for (std::size_t k = 0; k < r.blocks[i].labels.size(); ++k)
      if (r.blocks[i].labels[k] == label) return r.intervals.empty() ? std::nullopt : r.intervals[i][k];
  return std::nullopt;
}

}  // namespace

TEST(Transform, Examples) {
  ParamBlock sigma{"sigma", Transform::log, {"sigma"}, {1.0}};
  EXPECT_EQ(pack({sigma})(0), 0.0);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  EXPECT_EQ(unpack({sigma}, zero)[0].values[0], 1.0);

  ParamBlock phi{"phi", Transform::atanh, {"phi"}, {0.0}};
  EXPECT_EQ(pack({phi})(0), 0.0);

  ModelSpec spec;
  spec.n_states = 2;
  Matrix g(2, 2);
  g << 0.25, 0.75, 0.5, 0.5;
  const auto blocks = describe(spec, gaussian_hmm({0, 1}, {1, 1}, g));
  const Eigen::VectorXd v = pack(blocks);
  EXPECT_NEAR(v(0), std::log(3.0), 1e-15);

  sigma.values = {0.0};
  EXPECT_THROW(pack({sigma}), InvalidArgument);
  sigma.values = {-1.0};
  EXPECT_THROW(pack({sigma}), InvalidArgument);
  phi.values = {1.0};
  EXPECT_THROW(pack({phi}), InvalidArgument);
}

TEST(Transform, RoundTripOnRandomParameters) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const int n = 2 + rep % 3;
    ModelSpec spec;
    spec.n_states = n;
    spec.initial = InitialMode::estimated;
    Params p;
    p.gamma = Matrix(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) p.gamma(i, j) = u(rng);
      p.gamma.row(i) /= p.gamma.row(i).sum();
    }
    p.delta = RowVector(n);
    for (int j = 0; j < n; ++j) p.delta(j) = u(rng);
    p.delta /= p.delta.sum();
    EmissionComponent a{"step", {}, {}, false}, b{"angle", {}, {}, false}, c{"count", {}, {}, false},
        d{"flag", {}, {}, false};
    for (int j = 0; j < n; ++j) {
      a.per_state.push_back(GammaDist{u(rng) * 5, u(rng) * 3});
      b.per_state.push_back(VonMises{z(rng), u(rng) * 10});
      c.per_state.push_back(Poisson{u(rng) * 20});
      d.per_state.push_back(Bernoulli{u(rng) * 0.9});
    }
    p.emissions.components = {a, b, c, d};
    const auto blocks = describe(spec, p);
    const auto back = unpack(blocks, pack(blocks));
    for (std::size_t i = 0; i < blocks.size(); ++i)
      for (std::size_t k = 0; k < blocks[i].values.size(); ++k)
        EXPECT_NEAR(back[i].values[k], blocks[i].values[k], 1e-10) << blocks[i].labels[k];
    const Params q = assemble(spec, p, back);
    EXPECT_LT((q.gamma - p.gamma).cwiseAbs().maxCoeff(), 1e-10);

    ModelSpec ssm;
    ssm.cls = ModelClass::ssm_ar1;
    ssm.grid_m = 10;
    Params s;
    s.ar1 = {std::tanh(z(rng)), z(rng), u(rng) * 3};
    const auto sb = describe(ssm, s);
    const auto sback = unpack(sb, pack(sb));
    for (std::size_t i = 0; i < sb.size(); ++i) EXPECT_NEAR(sback[i].values[0], sb[i].values[0], 1e-10);
  }
}

TEST(Intervals, Examples) {
  const std::vector<ParamBlock> blocks{{"sigma", Transform::log, {"sigma"}, {1.0}}};
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(1);
  auto iv = wald_intervals(blocks, v, Eigen::MatrixXd::Ones(1, 1), 0.95);
  EXPECT_NEAR(iv[0][0]->lower, std::exp(-1.959963984540054), 1e-12);
  EXPECT_NEAR(iv[0][0]->upper, std::exp(1.959963984540054), 1e-11);

  iv = wald_intervals(blocks, v, Eigen::MatrixXd::Zero(1, 1), 0.95);
  EXPECT_EQ(iv[0][0]->lower, 1.0);
  EXPECT_EQ(iv[0][0]->upper, 1.0);

  // simplex rows and mixed transforms always bracket the estimate
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  ParamBlock g{"gamma", Transform::simplex, {"g11", "g12", "g21", "g22"}, {0.7, 0.3, 0.4, 0.6}};
  g.row_width = 2;
  g.reference = {0, 1};
  const std::vector<ParamBlock> mixed{g, {"phi", Transform::atanh, {"phi"}, {0.5}}, {"mu", Transform::identity, {"mu"}, {-1}}};
  const Eigen::VectorXd w = pack(mixed);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) a(i, j) = z(rng);
    const Eigen::MatrixXd cov = a * a.transpose();
    const auto ivs = wald_intervals(mixed, w, cov, 0.99);
    const auto nat = unpack(mixed, w);
    for (std::size_t i = 0; i < nat.size(); ++i)
      for (std::size_t k = 0; k < nat[i].values.size(); ++k) {
        EXPECT_LE(ivs[i][k]->lower, nat[i].values[k] + 1e-15);
        EXPECT_GE(ivs[i][k]->upper, nat[i].values[k] - 1e-15);
      }
  }
}

TEST(FitMle, SingleStateGaussianIsClosedForm) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(3.0, 2.0);
  std::vector<double> xs(500);
  for (auto& x : xs) x = z(rng);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / xs.size());

  ModelSpec spec;
  const FitResult r = fit_mle(spec, {plain_sequence(xs)}, gaussian_hmm({0.0}, {1.0}, Matrix::Ones(1, 1)));
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(block_value(r, "x.mean"), mean, 1e-6);
  EXPECT_NEAR(block_value(r, "x.sd"), sd, 1e-6);

  const FitResult tiny = fit_mle(spec, {plain_sequence({1, 2, 3})}, gaussian_hmm({0.0}, {1.0}, Matrix::Ones(1, 1)));
  EXPECT_NEAR(block_value(tiny, "x.mean"), 2.0, 1e-6);
  EXPECT_NEAR(block_value(tiny, "x.sd"), std::sqrt(2.0 / 3.0), 1e-6);
}

TEST(FitMle, SingleStateMmppIsClosedForm) {
  ModelSpec spec;
  spec.cls = ModelClass::mmpp;
  spec.mask = GeneratorMask(1);
  Params truth;
  truth.q = Matrix::Zero(1, 1);
  truth.rates = {2.0};
  Rng rng = make_stream(99);
  SimDesign d;
  d.horizon = 2500.0;
  const SimResult sim = simulate_sequence(spec, truth, d, rng);
  const auto& t = sim.seq.times;
  ASSERT_GT(t.size(), 4000u);
  const double closed = static_cast<double>(t.size() - 1) / (t.back() - t.front());
  Params init = truth;
  init.rates = {0.5};
  const FitResult r = fit_mle(spec, {sim.seq}, init);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(block_value(r, "lambda[1]"), closed, 1e-6);
}

TEST(FitMle, TwoStateGaussianHmmRecovers) {
  ModelSpec spec;
  spec.n_states = 2;
  Matrix g(2, 2);
  g << 0.9, 0.1, 0.2, 0.8;
  const Params truth = gaussian_hmm({-2, 2}, {1, 1}, g);
  Rng rng = make_stream(2024);
  SimDesign d;
  d.length = 10000;
  const SimResult sim = simulate_sequence(spec, truth, d, rng);

  Matrix g0(2, 2);
  g0 << 0.7, 0.3, 0.3, 0.7;
  const FitResult r = fit_mle(spec, {sim.seq}, gaussian_hmm({-1, 1}, {2, 2}, g0));
  ASSERT_TRUE(r.converged);
  ASSERT_TRUE(r.covariance.has_value());

  const std::vector<std::pair<std::string, double>> truths{
      {"gamma[1,2]", 0.1}, {"gamma[2,1]", 0.2}, {"x.mean[1]", -2}, {"x.mean[2]", 2}, {"x.sd[1]", 1}, {"x.sd[2]", 1}};
  // three delta-method standard errors = the 99.73% interval half-width
  FitOptions three_se;
  three_se.level = 0.9973002039367398;
  FitResult wide = r;
  attach_intervals(wide, Objective(r.spec, r.estimates, {sim.seq}, 1), three_se);
  for (const auto& [label, value] : truths) {
    const auto iv = block_interval(wide, label);
    ASSERT_TRUE(iv.has_value()) << label;
    EXPECT_LE(iv->lower, value) << label;
    EXPECT_GE(iv->upper, value) << label;
  }

  // reported log-likelihood re-evaluates at the estimates
  EXPECT_NEAR(log_likelihood(r.spec, r.estimates, {sim.seq}), r.loglik, 1e-8);
  // accepted iterates never increase the objective
  for (std::size_t k = 1; k < r.trace.size(); ++k) EXPECT_LE(r.trace[k], r.trace[k - 1]);

  // a second start reaches the same maximum
  Matrix g1(2, 2);
  g1 << 0.5, 0.5, 0.05, 0.95;
  const FitResult r2 = fit_mle(spec, {sim.seq}, gaussian_hmm({3, -3}, {0.5, 3}, g1));
  EXPECT_NEAR(r2.loglik, r.loglik, 1e-4);
  const double a = block_value(r, "x.mean[1]"), b = block_value(r2, "x.mean[1]"), c = block_value(r2, "x.mean[2]");
  EXPECT_NEAR(std::min(b, c), a, 1e-3);
}

TEST(FitMle, FixedBlocksStayPut) {
  ModelSpec spec;
  spec.n_states = 2;
  spec.fixed = {"x.sd"};
  Matrix g(2, 2);
  g << 0.9, 0.1, 0.1, 0.9;
  const Params truth = gaussian_hmm({-1, 1}, {0.5, 0.5}, g);
  Rng rng = make_stream(8);
  SimDesign d;
  d.length = 500;
  const SimResult sim = simulate_sequence(spec, truth, d, rng);
  const FitResult r = fit_mle(spec, {sim.seq}, gaussian_hmm({-0.5, 0.5}, {0.7, 0.7}, g));
  EXPECT_EQ(block_value(r, "x.sd[1]"), 0.7);
  EXPECT_EQ(r.n_params(), 4u);
  spec.fixed = {"nonsense"};
  EXPECT_THROW(fit_mle(spec, {sim.seq}, truth), InvalidArgument);
}

TEST(FitMle, ZeroLikelihoodAtInitIsReported) {
  ModelSpec spec;
  spec.cls = ModelClass::hmm;
  Params p;
  p.gamma = Matrix::Ones(1, 1);
  p.emissions.components.push_back({"k", {Poisson{1.0}}, {}, false});
  EXPECT_THROW(fit_mle(spec, {plain_sequence({1.0, 2.5})}, p), InvalidArgument);
}

TEST(FitMle, GridRefinementChangesFittedLikelihoodLittle) {
  ModelSpec spec;
  spec.cls = ModelClass::ssm_ar1;
  spec.grid_lower = -3.5;
  spec.grid_upper = 3.5;
  spec.fixed = {"mu"};
  Params truth;
  truth.ar1 = {0.888, 0.0, 0.554};
  truth.emissions.components.push_back({"y", {SvNormal{0.01, 0.026}}, {}, false});
  spec.grid_m = 100;
  Rng rng = make_stream(4242);
  SimDesign d;
  d.length = 2000;
  const SimResult sim = simulate_sequence(spec, truth, d, rng);
  const FitResult a = fit_mle(spec, {sim.seq}, truth);
  spec.grid_m = 200;
  const FitResult b = fit_mle(spec, {sim.seq}, truth);
  EXPECT_LE(std::abs(a.loglik - b.loglik), 1e-2);
}
