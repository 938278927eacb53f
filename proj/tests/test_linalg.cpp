#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "latmark/linalg.hpp"
#include "oracles.hpp"

using namespace latmark;

TEST(Expm, ZeroMatrixIsIdentity) {
  const Matrix r = expm(Matrix::Zero(3, 3));
  EXPECT_TRUE(r.isApprox(Matrix::Identity(3, 3), 1e-15));
}

TEST(Expm, DiagonalCase) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = -1.0;
  const Matrix r = expm(a);
  EXPECT_NEAR(r(0, 0), std::exp(1.0), 1e-14);
  EXPECT_NEAR(r(1, 1), std::exp(-1.0), 1e-15);
  EXPECT_EQ(r(0, 1), 0.0);
  EXPECT_EQ(r(1, 0), 0.0);
}

TEST(Expm, TwoStateClosedForm) {
  Matrix q(2, 2);
  q << -1, 1, 2, -2;
  const Matrix r = expm(q);
  const Matrix closed = oracle::two_state_tpm(1.0, 2.0, 1.0);
  const Matrix taylor = oracle::taylor_expm(q);
  EXPECT_NEAR(r(0, 0), 0.683262, 1e-5);
  EXPECT_NEAR(r(0, 1), 0.316738, 1e-5);
  EXPECT_NEAR(r(1, 0), 0.633475, 1e-5);
  EXPECT_NEAR(r(1, 1), 0.366525, 1e-5);
  EXPECT_LT((r - closed).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((closed - taylor).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Expm, RejectsBadInput) {
  EXPECT_THROW(expm(Matrix::Zero(2, 3)), InvalidArgument);
  Matrix a = Matrix::Zero(2, 2);
  a(0, 1) = NAN;
  EXPECT_THROW(expm(a), InvalidArgument);
}

TEST(Expm, MatchesTaylorOracleOnRandomGenerators) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> udt(0.0, 5.0);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + rep % 7;
    const Matrix q = oracle::random_generator(rng, n);
    const double dt = udt(rng);
    const Matrix r = expm(q * dt);
    EXPECT_LT((r - oracle::taylor_expm(q * dt)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_TRUE(is_transition_matrix(r)) << "n=" << n << " dt=" << dt;
    EXPECT_GE(r.minCoeff(), 0.0);
  }
}

TEST(Expm, LargeNormIsScaled) {
  std::mt19937_64 rng(5);
  const Matrix q = oracle::random_generator(rng, 6, 40.0);
  const Matrix r = expm(q * 3.0);
  EXPECT_TRUE(is_transition_matrix(r));
  EXPECT_LT((r - oracle::taylor_expm(q * 3.0)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Expm, SemigroupProperty) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ut(0.0, 2.0);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + rep % 6;
    Matrix q = oracle::random_generator(rng, n);
    const double rho = q.eigenvalues().cwiseAbs().maxCoeff();
    if (rho > 10.0) q *= 10.0 / rho;
    const double s = ut(rng), t = ut(rng);
    const Matrix lhs = expm(q * (s + t));
    const Matrix rhs = expm(q * s) * expm(q * t);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Stationary, DiscreteExamples) {
  Matrix flip(2, 2);
  flip << 0, 1, 1, 0;
  RowVector d = stationary_discrete(flip);
  EXPECT_NEAR(d(0), 0.5, 1e-15);
  EXPECT_NEAR(d(1), 0.5, 1e-15);

  Matrix g(2, 2);
  g << 0.9, 0.1, 0.2, 0.8;
  d = stationary_discrete(g);
  EXPECT_NEAR(d(0), 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(d(1), 1.0 / 3.0, 1e-14);

  EXPECT_THROW(stationary_discrete(Matrix::Identity(2, 2)), NonUniqueStationary);
}

TEST(Stationary, ContinuousExamples) {
  Matrix q(2, 2);
  q << -1, 1, 2, -2;
  RowVector d = stationary_continuous(q);
  EXPECT_NEAR(d(0), 2.0 / 3.0, 1e-14);
  EXPECT_NEAR(d(1), 1.0 / 3.0, 1e-14);

  d = stationary_continuous(Matrix::Zero(1, 1));
  ASSERT_EQ(d.size(), 1);
  EXPECT_EQ(d(0), 1.0);

  EXPECT_THROW(stationary_continuous(Matrix::Zero(2, 2)), NonUniqueStationary);
}

TEST(Stationary, ResidualsAndAgreementOnRandomChains) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + rep % 7;
    const Matrix g = oracle::random_stochastic(rng, n);
    const RowVector dg = stationary_discrete(g);
    EXPECT_LT((dg * g - dg).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(dg.sum(), 1.0, 1e-12);

    const Matrix q = oracle::random_generator(rng, n);
    const RowVector dq = stationary_continuous(q);
    EXPECT_LT((dq * q).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(dq.sum(), 1.0, 1e-12);
    EXPECT_LT((stationary_discrete(expm(q)) - dq).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(TpmFromEta, Examples) {
  Matrix g = tpm_from_eta(Matrix::Zero(3, 3));
  EXPECT_TRUE(g.isApprox(Matrix::Constant(3, 3, 1.0 / 3.0), 1e-15));

  Matrix eta = Matrix::Zero(2, 2);
  eta(0, 1) = std::log(3.0);
  g = tpm_from_eta(eta);
  EXPECT_NEAR(g(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.75, 1e-15);

  eta(0, 1) = 1000.0;
  g = tpm_from_eta(eta);
  EXPECT_TRUE(g.allFinite());
  EXPECT_NEAR(g(0, 0), 0.0, 1e-300);
  EXPECT_EQ(g(0, 1), 1.0);

  eta(1, 1) = 0.5;
  EXPECT_THROW(tpm_from_eta(eta), InvalidArgument);
}

TEST(TpmFromEta, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z(0.0, 3.0);
  for (int rep = 0; rep < 200; ++rep) {
    RowVector eta(4);
    for (int j = 0; j < 4; ++j) eta(j) = z(rng);
    const double c = z(rng) * 10.0;
    const RowVector a = softmax_row(eta);
    const RowVector b = softmax_row((eta.array() + c).matrix());
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TpmFromEta, EtaRoundTrip) {
  std::mt19937_64 rng(2);
  const Matrix g = oracle::random_stochastic(rng, 4);
  EXPECT_LT((tpm_from_eta(eta_from_tpm(g)) - g).cwiseAbs().maxCoeff(), 1e-14);
}
