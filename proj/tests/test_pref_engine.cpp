#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fedpob/pref_engine.hpp"
#include "test_util.hpp"

using namespace fedpob;
using namespace fedpob::pref;

namespace {

History random_history(std::mt19937_64& rng, std::size_t n, Eigen::Index d) {
  History h;
  for (std::size_t i = 0; i < n; ++i) {
    h.emplace_back(testutil::random_vector(rng, d), testutil::random_vector(rng, d), static_cast<int>(rng() % 2));
  }
  return h;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// f(theta) = 0.5 ||theta - c||^2
struct Quadratic {
  Vector c;
  double value(const Vector& theta) const { return 0.5 * (theta - c).squaredNorm(); }
  Vector gradient(const Vector& theta) const { return theta - c; }
};

}  // namespace

TEST(Beta, Monotone) {
  const BetaSchedule s{0.1, 16, 1.0, 3};
  double prev = beta_at(s, 0);
  for (std::uint64_t t = 1; t < 500; t += 7) {
    const double b = beta_at(s, t);
    EXPECT_GT(b, prev);
    prev = b;
  }
}

TEST(Beta, VanishesWithCertaintyAndNoData) {
  EXPECT_EQ(beta_at(BetaSchedule{1.0, 4, 1.0, 1}, 0), 0.0);
  EXPECT_LT(beta_at(BetaSchedule{1.0, 4, 1e12, 1}, 1), 1e-5);
}

TEST(Beta, DirectFormula) {
  const double want = std::sqrt(2.0 * std::log(10.0) + 768.0 * std::log(1.0 + 50.0 * 10.0 / 768.0));
  EXPECT_NEAR(beta_at(BetaSchedule{0.1, 768, 1.0, 10}, 50), want, 1e-12);
}

TEST(SelectDuel, ZeroModelTiesToLowestId) {
  const std::vector<Arm> arms{{3, Vector::Unit(2, 0)}, {1, Vector::Unit(2, 1)}, {4, -Vector::Unit(2, 0)}};
  const DuelChoice c = select_duel(Vector::Zero(2), SymMatrix::Identity(2, 2), arms, 0.0);
  EXPECT_EQ(c.first, 1u);
  EXPECT_EQ(c.second, 1u);
}

TEST(SelectDuel, ExploitOnlyPicksSameArmTwice) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Arm> arms;
    for (ArmId i = 0; i < 6; ++i) arms.push_back({i, testutil::random_vector(rng, 3)});
    const DuelChoice c = select_duel(testutil::random_vector(rng, 3), SymMatrix::Identity(3, 3), arms, 0.0);
    EXPECT_EQ(c.first, c.second);
  }
}

TEST(SelectDuel, MatchesBruteForce) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Arm> arms;
    for (ArmId i = 0; i < 5; ++i) arms.push_back({i, testutil::random_vector(rng, 2)});
    const Vector theta = testutil::random_vector(rng, 2);
    const double beta = 1.0;
    std::size_t p1 = 0;
    for (std::size_t i = 1; i < arms.size(); ++i)
      if (theta.dot(arms[i].embedding) > theta.dot(arms[p1].embedding)) p1 = i;
    std::size_t p2 = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < arms.size(); ++i) {
      const Vector diff = arms[i].embedding - arms[p1].embedding;
      const double v = theta.dot(diff) + beta * diff.norm();  // W_reg = I
      if (v > best) {
        best = v;
        p2 = i;
      }
    }
    const DuelChoice c = select_duel(theta, SymMatrix::Identity(2, 2), arms, beta);
    EXPECT_EQ(c.first, arms[p1].id);
    EXPECT_EQ(c.second, arms[p2].id);
  }
}

TEST(SelectDuel, Errors) {
  EXPECT_THROW(select_duel(Vector::Zero(2), SymMatrix::Identity(2, 2), {}, 1.0), EmptyArmSpace);
  const std::vector<Arm> arms{{0, Vector::Unit(3, 0)}};
  EXPECT_THROW(select_duel(Vector::Zero(2), SymMatrix::Identity(2, 2), arms, 1.0), DimensionMismatch);
}

TEST(PairwiseLoss, Examples) {
  EXPECT_EQ(pairwise_loss(Vector::Zero(3), {}), 0.0);
  std::mt19937_64 rng(1);
  const History h = random_history(rng, 7, 3);
  EXPECT_NEAR(pairwise_loss(Vector::Zero(3), h), 7.0 * std::log(2.0), 1e-13);

  const History one{PreferenceRecord(Vector::Unit(3, 0), Vector::Zero(3), 1)};
  for (double z : {-1.0, 0.0, 1.0}) {
    const Vector theta{{z, 0.0, 0.0}};
    EXPECT_NEAR(pairwise_loss(theta, one), -std::log(logistic(z)), 1e-15);
  }
}

TEST(PairwiseLoss, StableForLargeMargins) {
  const History one{PreferenceRecord(Vector::Unit(1, 0), Vector::Zero(1), 1)};
  EXPECT_NEAR(pairwise_loss(Vector{{-800.0}}, one), 800.0, 1e-9);
  EXPECT_GE(pairwise_loss(Vector{{800.0}}, one), 0.0);
  EXPECT_TRUE(std::isfinite(pairwise_loss(Vector{{-800.0}}, one)));
}

TEST(PairwiseLoss, SwapSymmetry) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const History h = random_history(rng, 10, 5);
    History swapped;
    for (const auto& r : h) swapped.emplace_back(r.u2, r.u1, 1 - r.outcome);
    for (int k = 0; k < 5; ++k) {
      const Vector theta = testutil::random_vector(rng, 5, 2.0);
      EXPECT_EQ(pairwise_loss(theta, h), pairwise_loss(theta, swapped));
    }
  }
}

TEST(PairwiseLoss, ConvexAlongSegments) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const History h = random_history(rng, 8, 4);
    const Vector a = testutil::random_vector(rng, 4, 3.0);
    const Vector b = testutil::random_vector(rng, 4, 3.0);
    const double mid = pairwise_loss(0.5 * (a + b), h);
    EXPECT_LE(mid, 0.5 * (pairwise_loss(a, h) + pairwise_loss(b, h)) + 1e-10);
  }
}

TEST(PairwiseLossGradient, Examples) {
  EXPECT_EQ(pairwise_loss_gradient(Vector::Zero(3), {}), Vector::Zero(3));
  const History one{PreferenceRecord(Vector::Unit(3, 0), Vector::Zero(3), 1)};
  const Vector g = pairwise_loss_gradient(Vector::Zero(3), one);
  EXPECT_EQ(g, (Vector{{-0.5, 0.0, 0.0}}));
}

TEST(PairwiseLossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 16);
    const History hist = random_history(rng, 10, d);
    const Vector theta = testutil::random_vector(rng, d, 0.5);
    const Vector g = pairwise_loss_gradient(theta, hist);
    Vector fd(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      Vector p = theta, m = theta;
      p[j] += h;
      m[j] -= h;
      fd[j] = (pairwise_loss(p, hist) - pairwise_loss(m, hist)) / (2 * h);
    }
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(LocalUpdate, EmptyHistoryNoDriftStaysAtCenter) {
  PrefAgentState s(0, 3, 1.0);
  const Vector center{{0.1, -0.2, 0.3}};
  EXPECT_EQ(local_update(s, center, 0.001, 30), center);
}

TEST(LocalUpdate, EmptyHistoryWithDriftReachesClosedForm) {
  PrefAgentState s(0, 3, 2.0);
  s.drift_grad = Vector{{1.0, -2.0, 0.5}};
  const Vector center{{0.1, -0.2, 0.3}};
  const Vector got = local_update(s, center, 0.1, 200);
  EXPECT_LE((got - (center + s.drift_grad / 2.0)).norm(), 1e-6);
}

TEST(LocalUpdate, DecreasesTheObjective) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    PrefAgentState s(0, 4, 1.0);
    s.history = random_history(rng, 12, 4);
    s.drift_grad = testutil::random_vector(rng, 4, 0.3);
    const Vector center = testutil::random_vector(rng, 4, 0.5);
    const PairwiseLogisticLoss loss{s.history};
    double prev = regularized_objective(loss, center, s.drift_grad, center, 1.0);
    for (int iters : {1, 5, 30}) {
      const Vector theta = proximal_descent(loss, s.drift_grad, center, 1.0, 0.001, iters);
      const double obj = regularized_objective(loss, theta, s.drift_grad, center, 1.0);
      EXPECT_LE(obj, prev + 1e-12);
      prev = obj;
    }
  }
}

TEST(LocalUpdate, ProximalDominance) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const History h = random_history(rng, 15, 5);
    const Vector center = testutil::random_vector(rng, 5, 0.2);
    for (auto [lr, iters] : {std::pair{0.001, 30}, std::pair{0.002, 2000}}) {
      double prev = std::numeric_limits<double>::infinity();
      for (double lambda : {1.0, 10.0, 100.0}) {
        PrefAgentState s(0, 5, lambda);
        s.history = h;
        const double dist = (local_update(s, center, lr, iters) - center).norm();
        EXPECT_LE(dist, prev + 1e-15) << "lambda=" << lambda;
        prev = dist;
      }
    }
  }
}

TEST(LocalUpdate, DivergenceIsReported) {
  PrefAgentState s(0, 2, 1.0);
  s.drift_grad = Vector{{1.0, 1.0}};
  EXPECT_THROW(local_update(s, Vector::Zero(2), 1e3, 200), NonFiniteIterate);
  EXPECT_THROW(local_update(s, Vector::Zero(2), 0.0, 10), ConfigError);
  EXPECT_THROW(local_update(s, Vector::Zero(2), 0.1, 0), ConfigError);
}

TEST(DriftUpdate, Examples) {
  PrefAgentState s(0, 2, 3.0);
  s.drift_grad = Vector{{0.5, -0.5}};
  s.theta_local = Vector{{1.0, 2.0}};
  drift_update(s, s.theta_local);
  EXPECT_EQ(s.drift_grad, (Vector{{0.5, -0.5}}));

  PrefAgentState z(0, 2, 3.0);
  z.theta_local = Vector{{1.0, 2.0}};
  drift_update(z, Vector{{0.5, 0.5}});
  EXPECT_EQ(z.drift_grad, (Vector{{-1.5, -4.5}}));
}

TEST(AccumulatePair, Examples) {
  PrefAgentState s(0, 3, 1.0);
  const Vector u{{0.2, 0.4, -1.0}};
  accumulate_pair(s, u, u, 1);
  EXPECT_EQ(s.W_new, SymMatrix::Zero(3, 3));
  ASSERT_EQ(s.history.size(), 1u);
  EXPECT_NEAR(pairwise_loss(Vector{{5.0, -3.0, 1.0}}, s.history), std::log(2.0), 1e-15);

  accumulate_pair(s, Vector::Unit(3, 0), Vector::Zero(3), 0);
  SymMatrix want = SymMatrix::Zero(3, 3);
  want(0, 0) = 1.0;
  EXPECT_EQ(s.W_new, want);
  EXPECT_EQ(s.history.size(), 2u);

  EXPECT_THROW(accumulate_pair(s, u, u, 2), Error);
  EXPECT_THROW(accumulate_pair(s, Vector::Zero(2), u, 1), DimensionMismatch);
}

TEST(ServerRound, Examples) {
  PrefServerState one(2, 1.0, 1, Vector::Zero(2));
  const std::vector<PrefUpload> solo{{Vector{{0.3, 0.4}}, Vector::Zero(2), SymMatrix::Identity(2, 2)}};
  PrefBroadcast bc = server_round(one, solo);
  EXPECT_EQ(bc.theta_global, (Vector{{0.3, 0.4}}));
  EXPECT_EQ(bc.W_sync, SymMatrix::Identity(2, 2));

  PrefServerState same(2, 2.0, 3, Vector::Zero(2));
  const PrefUpload u{Vector{{1.0, 2.0}}, Vector{{4.0, -2.0}}, SymMatrix::Zero(2, 2)};
  bc = server_round(same, std::vector<PrefUpload>(3, u));
  EXPECT_NEAR(bc.theta_global[0], 1.0 - 2.0, 1e-15);
  EXPECT_NEAR(bc.theta_global[1], 2.0 + 1.0, 1e-15);

  PrefServerState three(2, 0.5, 3, Vector::Zero(2));
  const std::vector<PrefUpload> ups{{Vector{{1.0, 0.0}}, Vector{{0.3, 0.0}}, SymMatrix::Identity(2, 2)},
                                    {Vector{{0.0, 1.0}}, Vector{{0.0, 0.6}}, SymMatrix::Identity(2, 2)},
                                    {Vector{{2.0, 2.0}}, Vector{{-0.9, 0.3}}, SymMatrix::Identity(2, 2)}};
  bc = server_round(three, ups);
  // mean theta = (1, 1); mean drift = (-0.2, 0.3); divided by lambda = (-0.4, 0.6)
  EXPECT_NEAR(bc.theta_global[0], 1.4, 1e-15);
  EXPECT_NEAR(bc.theta_global[1], 0.4, 1e-15);
  EXPECT_EQ(bc.W_sync, 3.0 * SymMatrix::Identity(2, 2));

  EXPECT_THROW(server_round(three, solo), MissingUpload);
}

// The full local-update / drift-update / server loop with the logistic loss
// replaced by 0.5||theta - c_i||^2. The consensus point is mean(c_i), where the
// local gradients cancel while each stays large.
TEST(Stationarity, QuadraticConsensus) {
  std::mt19937_64 rng(13);
  for (std::size_t m : {2u, 5u}) {
    const Eigen::Index d = 2;
    const double lambda = 1.0;
    std::vector<Quadratic> fs;
    Vector mean = Vector::Zero(d);
    for (std::size_t i = 0; i < m; ++i) {
      fs.push_back({testutil::random_vector(rng, d, 2.0)});
      mean += fs.back().c / static_cast<double>(m);
    }
    std::vector<Vector> drift(m, Vector::Zero(d));
    PrefServerState server(d, lambda, m, Vector::Zero(d));
    int rounds = 0;
    for (; rounds < 500; ++rounds) {
      const Vector prev = server.theta_global;
      std::vector<PrefUpload> ups(m);
      double moved = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const Vector local = proximal_descent(fs[i], drift[i], prev, lambda, 0.1, 200);
        drift[i] -= lambda * (local - prev);
        moved = std::max(moved, (local - prev).norm());
        ups[i] = {local, drift[i], SymMatrix::Zero(d, d)};
      }
      server_round(server, ups);
      // Stop once the global model sits at the consensus point and no local
      // model wants to leave it.
      if ((server.theta_global - mean).norm() <= 1e-6 && moved <= 1e-9) break;
    }
    EXPECT_LT(rounds, 500) << "m=" << m;
    const Vector& star = server.theta_global;
    EXPECT_LE((star - mean).norm(), 1e-6);

    Vector sum = Vector::Zero(d);
    double largest = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const Vector g = fs[i].gradient(star);
      sum += g;
      largest = std::max(largest, g.norm());
      // The maintained drift term converges to the local gradient at the
      // consensus point.
      EXPECT_LE((drift[i] - g).norm(), 1e-5);
    }
    EXPECT_LE(sum.norm(), 1e-6);
    EXPECT_GE(largest, 0.1);
  }
}
