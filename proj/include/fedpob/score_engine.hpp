#pragma once

// Federated LinUCB with a determinant-growth communication trigger.
//
// Each agent keeps the last server broadcast (W_sync, b_sync) and the
// statistics it gathered since (W_new, b_new). The local model is the ridge
// solution over both; a communication round is requested once
//
//   (t - t_last) * (log det V_t - log det V_last) > D
//
// where V = lambda*I + W_sync + W_new and V_last is V right after the most
// recent sync.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedpob/arm.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/linalg.hpp"

namespace fedpob::score {

using Round = std::uint64_t;

struct Delta {
  SymMatrix W;
  Vector b;
};

struct ScoreAgentState {
  std::uint32_t agent_id = 0;
  Eigen::Index d = 0;
  double lambda = 1.0;
  SymMatrix W_sync;
  Vector b_sync;
  SymMatrix W_new;
  Vector b_new;
  Round t_last = 0;
  double logdet_last = 0.0;

  ScoreAgentState() = default;

  ScoreAgentState(std::uint32_t id, Eigen::Index dim, double lam)
      : agent_id(id),
        d(dim),
        lambda(lam),
        W_sync(SymMatrix::Zero(dim, dim)),
        b_sync(Vector::Zero(dim)),
        W_new(SymMatrix::Zero(dim, dim)),
        b_new(Vector::Zero(dim)),
        logdet_last(static_cast<double>(dim) * std::log(lam)) {
    if (dim <= 0) throw DimensionMismatch("score agent: dimension must be positive");
    if (!(lam > 0.0)) throw ConfigError("score agent: lambda must be positive");
  }

  SymMatrix information_matrix() const {
    return symmetrized(identity_scaled(d, lambda) + W_sync + W_new);
  }
};

struct Model {
  SymMatrix V;
  Vector theta_hat;
};

inline Model refresh_model(const ScoreAgentState& s) {
  Model m{s.information_matrix(), Vector()};
  m.theta_hat = solve_psd(m.V, s.b_sync + s.b_new);
  return m;
}

// UCB score <theta, u> + nu * ||u||_{V^-1} for every arm, highest wins, ties
// to the lowest id.
inline ArmId select_arm(const Vector& theta_hat, const SymMatrix& V, ArmSpan arms, double nu) {
  if (arms.empty()) throw EmptyArmSpace("select_arm: no arms");
  const CholeskyFactor chol(V);
  require_same_dim(chol.dim(), theta_hat.size(), "select_arm");
  ArmId best_id = 0;
  double best = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (const Arm& arm : arms) {
    require_same_dim(chol.dim(), arm.embedding.size(), "select_arm");
    const double bonus = nu == 0.0 ? 0.0 : nu * chol.inv_weighted_norm(arm.embedding);
    const double ucb = theta_hat.dot(arm.embedding) + bonus;
    if (!have || ucb > best || (ucb == best && arm.id < best_id)) {
      best = ucb;
      best_id = arm.id;
      have = true;
    }
  }
  return best_id;
}

inline void record_score(ScoreAgentState& s, const Vector& u, double score) {
  require_same_dim(s.d, u.size(), "record_score");
  if (!std::isfinite(score)) throw Error("record_score: non-finite score");
  s.W_new.noalias() += u * u.transpose();
  s.b_new.noalias() += u * score;
}

inline bool should_sync(const ScoreAgentState& s, Round t, double D) {
  if (t <= s.t_last) return false;
  const double growth = log_det(s.information_matrix()) - s.logdet_last;
  return static_cast<double>(t - s.t_last) * growth > D;
}

inline Delta extract_delta(ScoreAgentState& s) {
  Delta out{std::move(s.W_new), std::move(s.b_new)};
  s.W_new = SymMatrix::Zero(s.d, s.d);
  s.b_new = Vector::Zero(s.d);
  return out;
}

// Replaces (does not add to) the synchronized statistics.
inline void apply_sync(ScoreAgentState& s, const SymMatrix& W_sync, const Vector& b_sync, Round t) {
  require_square(W_sync, "apply_sync");
  require_same_dim(s.d, W_sync.rows(), "apply_sync");
  require_same_dim(s.d, b_sync.size(), "apply_sync");
  s.W_sync = W_sync;
  s.b_sync = b_sync;
  s.t_last = t;
  s.logdet_last = log_det(identity_scaled(s.d, s.lambda) + s.W_sync);
}

struct ScoreServerState {
  Eigen::Index d = 0;
  SymMatrix W_sync;
  Vector b_sync;
  std::vector<std::uint32_t> agents;

  ScoreServerState() = default;

  ScoreServerState(Eigen::Index dim, std::vector<std::uint32_t> agent_ids)
      : d(dim),
        W_sync(SymMatrix::Zero(dim, dim)),
        b_sync(Vector::Zero(dim)),
        agents(std::move(agent_ids)) {}
};

// Full participation: exactly one delta per registered agent, in the order of
// server.agents. Entries left empty (size 0) count as missing.
inline Delta server_aggregate(ScoreServerState& server, std::span<const Delta> deltas) {
  if (deltas.size() != server.agents.size()) {
    throw MissingUpload("server_aggregate: expected " + std::to_string(server.agents.size()) +
                        " deltas, got " + std::to_string(deltas.size()));
  }
  SymMatrix W = server.W_sync;
  Vector b = server.b_sync;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas[i].W.size() == 0 || deltas[i].b.size() == 0) {
      throw MissingUpload("server_aggregate: missing delta from agent " +
                          std::to_string(server.agents[i]));
    }
    require_same_dim(server.d, deltas[i].W.rows(), "server_aggregate");
    require_same_dim(server.d, deltas[i].W.cols(), "server_aggregate");
    require_same_dim(server.d, deltas[i].b.size(), "server_aggregate");
    W += deltas[i].W;
    b += deltas[i].b;
  }
  server.W_sync = std::move(W);
  server.b_sync = std::move(b);
  return Delta{server.W_sync, server.b_sync};
}

}  // namespace fedpob::score
