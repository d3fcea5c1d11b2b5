#pragma once

// Federated linear dueling bandit with dynamic regularization.
//
// Every round each agent picks an exploitation arm and an exploration arm
// against the last global model, observes which one wins, then minimizes
//
//   G(theta) = L(theta) - <g, theta> + (lambda/2) ||theta - theta_global||^2
//
// where L is the pairwise logistic loss over its history and g the drift
// term. g is then moved by -lambda * (theta_local - theta_global) and both
// are uploaded. The server averages the local models and subtracts the mean
// drift scaled by 1/lambda.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedpob/arm.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/linalg.hpp"

namespace fedpob::pref {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// -log sigmoid(z), finite for every finite z.
inline double neg_log_sigmoid(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

struct BetaSchedule {
  double delta = 0.1;
  double d = 1.0;
  double lambda = 1.0;
  double kappa_mu = 1.0;  // the number of agents
};

inline double beta_at(const BetaSchedule& s, std::uint64_t t) {
  const double tt = static_cast<double>(t);
  return std::sqrt(2.0 * std::log(1.0 / s.delta) + s.d * std::log1p(tt * s.kappa_mu / (s.d * s.lambda)));
}

struct PreferenceRecord {
  Vector u1;
  Vector u2;
  int outcome = 0;  // 1 iff the first arm won
  Vector diff;      // u1 - u2

  PreferenceRecord(Vector a, Vector b, int won) : u1(std::move(a)), u2(std::move(b)), outcome(won) {
    diff = u1 - u2;
  }
};

using History = std::vector<PreferenceRecord>;

struct DuelChoice {
  ArmId first = 0;
  ArmId second = 0;
};

inline DuelChoice select_duel(const Vector& theta_global, const SymMatrix& W_reg, ArmSpan arms,
                              double beta_t) {
  if (arms.empty()) throw EmptyArmSpace("select_duel: no arms");
  const Eigen::Index d = theta_global.size();

  std::size_t first = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    require_same_dim(d, arms[i].embedding.size(), "select_duel");
    const double v = theta_global.dot(arms[i].embedding);
    if (i == 0 || v > best || (v == best && arms[i].id < arms[first].id)) {
      best = v;
      first = i;
    }
  }

  const bool explore = beta_t != 0.0;
  std::optional<CholeskyFactor> chol;
  if (explore) {
    chol.emplace(W_reg);
    require_same_dim(d, chol->dim(), "select_duel");
  }
  const Vector& anchor = arms[first].embedding;
  std::size_t second = 0;
  best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const Vector diff = arms[i].embedding - anchor;
    double v = theta_global.dot(diff);
    if (explore) v += beta_t * chol->inv_weighted_norm(diff);
    if (i == 0 || v > best || (v == best && arms[i].id < arms[second].id)) {
      best = v;
      second = i;
    }
  }
  return DuelChoice{arms[first].id, arms[second].id};
}

inline double pairwise_loss(const Vector& theta, std::span<const PreferenceRecord> history) {
  double loss = 0.0;
  for (const auto& r : history) {
    const double z = theta.dot(r.diff);
    loss += r.outcome ? neg_log_sigmoid(z) : neg_log_sigmoid(-z);
  }
  return loss;
}

inline Vector pairwise_loss_gradient(const Vector& theta, std::span<const PreferenceRecord> history) {
  Vector g = Vector::Zero(theta.size());
  for (const auto& r : history) {
    const double z = theta.dot(r.diff);
    g.noalias() += (sigmoid(z) - static_cast<double>(r.outcome)) * r.diff;
  }
  return g;
}

// Anything with a value and a gradient can sit in the local objective.
template <class F>
concept SmoothObjective = requires(const F& f, const Vector& x) {
  { f.value(x) } -> std::convertible_to<double>;
  { f.gradient(x) } -> std::convertible_to<Vector>;
};

struct PairwiseLogisticLoss {
  std::span<const PreferenceRecord> history;

  double value(const Vector& theta) const { return pairwise_loss(theta, history); }
  Vector gradient(const Vector& theta) const { return pairwise_loss_gradient(theta, history); }
};

template <SmoothObjective F>
double regularized_objective(const F& loss, const Vector& theta, const Vector& drift,
                             const Vector& center, double lambda) {
  return loss.value(theta) - drift.dot(theta) + 0.5 * lambda * (theta - center).squaredNorm();
}

// Full-batch gradient descent on the regularized objective, started at the
// proximal center.
template <SmoothObjective F>
Vector proximal_descent(const F& loss, const Vector& drift, const Vector& center, double lambda,
                        double lr, int iters) {
  if (!(lr > 0.0)) throw ConfigError("local update: learning rate must be positive");
  if (iters < 1) throw ConfigError("local update: iterations must be >= 1");
  require_same_dim(center.size(), drift.size(), "local update");
  Vector theta = center;
  for (int k = 0; k < iters; ++k) {
    Vector grad = loss.gradient(theta);
    grad -= drift;
    grad += lambda * (theta - center);
    theta -= lr * grad;
    if (!theta.allFinite()) {
      throw NonFiniteIterate("local update: iterate " + std::to_string(k + 1) +
                             " is not finite (learning rate too large?)");
    }
  }
  return theta;
}

struct PrefAgentState {
  std::uint32_t agent_id = 0;
  Eigen::Index d = 0;
  double lambda = 1.0;
  Vector theta_local;
  Vector drift_grad;
  History history;
  SymMatrix W_new;

  PrefAgentState() = default;

  PrefAgentState(std::uint32_t id, Eigen::Index dim, double lam)
      : agent_id(id),
        d(dim),
        lambda(lam),
        theta_local(Vector::Zero(dim)),
        drift_grad(Vector::Zero(dim)),
        W_new(SymMatrix::Zero(dim, dim)) {
    if (dim <= 0) throw DimensionMismatch("pref agent: dimension must be positive");
    if (!(lam > 0.0)) throw ConfigError("pref agent: lambda must be positive");
  }
};

inline void accumulate_pair(PrefAgentState& s, const Vector& u1, const Vector& u2, int outcome) {
  require_same_dim(s.d, u1.size(), "accumulate_pair");
  require_same_dim(s.d, u2.size(), "accumulate_pair");
  if (outcome != 0 && outcome != 1) throw Error("accumulate_pair: outcome must be 0 or 1");
  s.history.emplace_back(u1, u2, outcome);
  const Vector& diff = s.history.back().diff;
  s.W_new = diff * diff.transpose();
}

inline const Vector& local_update(PrefAgentState& s, const Vector& theta_global_prev, double lr,
                                  int iters) {
  require_same_dim(s.d, theta_global_prev.size(), "local_update");
  s.theta_local = proximal_descent(PairwiseLogisticLoss{s.history}, s.drift_grad, theta_global_prev,
                                   s.lambda, lr, iters);
  return s.theta_local;
}

inline void drift_update(PrefAgentState& s, const Vector& theta_global_prev) {
  require_same_dim(s.d, theta_global_prev.size(), "drift_update");
  s.drift_grad -= s.lambda * (s.theta_local - theta_global_prev);
}

struct PrefUpload {
  Vector theta_local;
  Vector drift_grad;
  SymMatrix W_new;
};

struct PrefBroadcast {
  Vector theta_global;
  SymMatrix W_sync;
};

struct PrefServerState {
  Eigen::Index d = 0;
  double lambda = 1.0;
  std::size_t n = 0;
  Vector theta_global;
  SymMatrix W_sync;

  PrefServerState() = default;

  PrefServerState(Eigen::Index dim, double lam, std::size_t agents, Vector theta0)
      : d(dim), lambda(lam), n(agents), theta_global(std::move(theta0)), W_sync(SymMatrix::Zero(dim, dim)) {
    require_same_dim(d, theta_global.size(), "pref server");
  }
};

inline PrefBroadcast server_round(PrefServerState& server, std::span<const PrefUpload> uploads) {
  if (uploads.size() != server.n || server.n == 0) {
    throw MissingUpload("server_round: expected " + std::to_string(server.n) + " uploads, got " +
                        std::to_string(uploads.size()));
  }
  Vector theta_sum = Vector::Zero(server.d);
  Vector drift_sum = Vector::Zero(server.d);
  SymMatrix W = server.W_sync;
  for (const auto& up : uploads) {
    require_same_dim(server.d, up.theta_local.size(), "server_round");
    require_same_dim(server.d, up.drift_grad.size(), "server_round");
    require_same_dim(server.d, up.W_new.rows(), "server_round");
    require_same_dim(server.d, up.W_new.cols(), "server_round");
    theta_sum += up.theta_local;
    drift_sum += up.drift_grad;
    W += up.W_new;
  }
  const double n = static_cast<double>(server.n);
  server.theta_global = theta_sum / n - drift_sum / (n * server.lambda);
  server.W_sync = std::move(W);
  return PrefBroadcast{server.theta_global, server.W_sync};
}

}  // namespace fedpob::pref
