#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <Eigen/LU>

#include "fedpob/linalg.hpp"
#include "test_util.hpp"

using namespace fedpob;

TEST(SolvePsd, IdentityIsNoOp) {
  const Vector x = solve_psd(SymMatrix::Identity(2, 2), Vector{{3.0, -1.0}});
  EXPECT_DOUBLE_EQ(x[0], 3.0);
  EXPECT_DOUBLE_EQ(x[1], -1.0);
}

TEST(SolvePsd, DiagonalScaling) {
  const Vector x = solve_psd(identity_scaled(3, 2.0), Vector{{2.0, 4.0, 6.0}});
  EXPECT_NEAR(x[0], 1.0, 1e-15);
  EXPECT_NEAR(x[1], 2.0, 1e-15);
  EXPECT_NEAR(x[2], 3.0, 1e-15);
}

TEST(SolvePsd, MatchesTwoByTwoInverse) {
  const SymMatrix A = rank_one_update(SymMatrix::Identity(2, 2), Vector{{1.0, 1.0}});
  const double a = A(0, 0), b = A(0, 1), c = A(1, 0), d = A(1, 1);
  const double det = a * d - b * c;
  const Vector rhs{{1.0, 1.0}};
  const double x0 = (d * rhs[0] - b * rhs[1]) / det;
  const double x1 = (-c * rhs[0] + a * rhs[1]) / det;
  const Vector x = solve_psd(A, rhs);
  EXPECT_NEAR(x[0], x0, 1e-15);
  EXPECT_NEAR(x[1], x1, 1e-15);

  const SymMatrix A2 = rank_one_update(SymMatrix::Identity(2, 2), Vector{{1.0, 0.0}});
  const Vector y = solve_psd(A2, rhs);
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
}

TEST(SolvePsd, RejectsIndefinite) {
  SymMatrix A = SymMatrix::Identity(2, 2);
  A(1, 1) = -1.0;
  EXPECT_THROW(solve_psd(A, Vector::Ones(2)), NotPositiveDefinite);
  EXPECT_THROW(solve_psd(SymMatrix::Zero(3, 3), Vector::Ones(3)), NotPositiveDefinite);
}

TEST(SolvePsd, RejectsNonFinite) {
  SymMatrix A = SymMatrix::Identity(2, 2);
  A(0, 1) = std::nan("");
  EXPECT_THROW(solve_psd(A, Vector::Ones(2)), NotPositiveDefinite);
}

TEST(SolvePsd, RejectsDimensionMismatch) {
  EXPECT_THROW(solve_psd(SymMatrix::Identity(2, 2), Vector::Ones(3)), DimensionMismatch);
  EXPECT_THROW(solve_psd(SymMatrix::Identity(2, 3), Vector::Ones(2)), DimensionMismatch);
}

TEST(SolvePsd, RecoversRandomSolutions) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 32);
    const SymMatrix A = testutil::random_pd(rng, d, 1.0);
    const Vector x = testutil::random_vector(rng, d);
    const Vector got = solve_psd(A, A * x);
    EXPECT_LE((got - x).norm() / x.norm(), 1e-9) << "d=" << d;
  }
}

TEST(LogDet, IdentityIsZero) {
  for (Eigen::Index d : {1, 5, 64}) EXPECT_EQ(log_det(SymMatrix::Identity(d, d)), 0.0);
  EXPECT_EQ(log_det(identity_scaled(768, 1.0)), 0.0);
}

TEST(LogDet, DiagonalIsSumOfLogs) {
  SymMatrix A = SymMatrix::Zero(2, 2);
  A(0, 0) = 2.0;
  A(1, 1) = 3.0;
  EXPECT_NEAR(log_det(A), std::log(6.0), 1e-15);
}

TEST(LogDet, MatchesLuDeterminant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 10);
    const SymMatrix A = testutil::random_pd(rng, d);
    const double want = std::log(Eigen::FullPivLU<SymMatrix>(A).determinant());
    EXPECT_NEAR(log_det(A), want, 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST(RankOneUpdate, Examples) {
  const SymMatrix e = rank_one_update(SymMatrix::Zero(3, 3), Vector::Unit(3, 0));
  SymMatrix want = SymMatrix::Zero(3, 3);
  want(0, 0) = 1.0;
  EXPECT_EQ(e, want);

  EXPECT_EQ(rank_one_update(SymMatrix::Identity(4, 4), Vector::Zero(4)), SymMatrix::Identity(4, 4));

  const SymMatrix m = rank_one_update(SymMatrix::Identity(2, 2), Vector{{1.0, 1.0}});
  EXPECT_EQ(m(0, 0), 2.0);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_EQ(m(1, 0), 1.0);
  EXPECT_EQ(m(1, 1), 2.0);

  EXPECT_THROW(rank_one_update(SymMatrix::Identity(2, 2), Vector::Ones(3)), DimensionMismatch);
}

TEST(RankOneUpdate, DeterminantLemma) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 16);
    const SymMatrix A = testutil::random_pd(rng, d);
    const Vector u = testutil::random_vector(rng, d);
    const double before = log_det(A);
    const double after = log_det(rank_one_update(A, u));
    // det(A + uu^T) = det(A) (1 + u^T A^-1 u)
    const double lemma = before + std::log1p(u.dot(A.inverse() * u));
    EXPECT_GT(after, before);
    EXPECT_NEAR(after, lemma, 1e-8 * std::max(1.0, std::abs(lemma)));
    EXPECT_EQ(log_det(rank_one_update(A, Vector::Zero(d))), before);
  }
}

TEST(InvWeightedNorm, Examples) {
  EXPECT_NEAR(inv_weighted_norm(SymMatrix::Identity(2, 2), Vector{{3.0, 4.0}}), 5.0, 1e-15);
  EXPECT_NEAR(inv_weighted_norm(identity_scaled(2, 4.0), Vector{{3.0, 4.0}}), 2.5, 1e-15);
  std::mt19937_64 rng(1);
  EXPECT_EQ(inv_weighted_norm(testutil::random_pd(rng, 3), Vector::Zero(3)), 0.0);
}

TEST(InvWeightedNorm, SquareEqualsQuadraticForm) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 16);
    const SymMatrix A = testutil::random_pd(rng, d);
    const Vector u = testutil::random_vector(rng, d);
    const double n = inv_weighted_norm(A, u);
    EXPECT_LE(testutil::rel_err(n * n, u.dot(solve_psd(A, u))), 1e-10);
  }
}

TEST(CholeskyFactor, SymmetrizesInput) {
  SymMatrix A = SymMatrix::Identity(2, 2) * 2.0;
  A(0, 1) = 0.5;
  A(1, 0) = 0.3;
  const CholeskyFactor f(A);
  EXPECT_NEAR(f.log_det(), std::log(4.0 - 0.16), 1e-14);
}
