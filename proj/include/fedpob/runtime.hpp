#pragma once

// Round orchestration for both algorithms. Agents and the server are written
// once against AgentLink / ServerLink and run unchanged over the in-process
// bus or TCP. All agents advance in lockstep on a global round index.
//
// Score feedback, per round t:
//   agent  -> SYNC_REQUEST{flag}       every agent, every round
//   server -> SYNC_REQUEST{any flag}   the decision, to every agent
//   if any: agent -> DELTA_UPLOAD, server -> SYNC_BROADCAST
//
// Preference feedback: MODEL_BROADCAST at round 0 carries the initial model;
// then every round each agent sends PREF_UPLOAD and receives MODEL_BROADCAST.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fedpob/env.hpp"
#include "fedpob/envelope.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/pref_engine.hpp"
#include "fedpob/rng.hpp"
#include "fedpob/score_engine.hpp"
#include "fedpob/socket.hpp"
#include "fedpob/trace.hpp"
#include "fedpob/transport.hpp"

namespace fedpob {

enum class Algo { fedpob, fedpob_pref };
enum class Transport { inproc, socket };

struct FederationParams {
  Algo algo = Algo::fedpob;
  std::size_t n_agents = 1;
  std::uint64_t rounds = 50;
  double lambda = 1.0;
  double nu = 0.3;
  double D = 10.0;
  double delta = 0.1;
  double lr = 0.001;
  int local_iters = 30;
  double init_sigma = 0.01;
  std::uint64_t seed = 0;
};

// An engine or environment failure inside a round, tagged with where it
// happened.
struct RunError : Error {
  using Error::Error;
};

struct AgentHooks {
  // Called on the agent's thread right after a broadcast is applied.
  std::function<void(std::uint64_t round, const score::ScoreAgentState&)> on_score_sync;
  // Called on the agent's thread after the round's broadcast is received.
  std::function<void(std::uint64_t round, const pref::PrefAgentState&, const Vector& theta_global)>
      on_pref_round;
};

struct AgentRun {
  std::vector<TraceRecord> trace;
  CommLedger ledger;
};

struct ServerRun {
  std::vector<CommLedger> per_agent;  // the server's side of each connection
  std::uint64_t comm_rounds = 0;
};

struct RunResult {
  std::vector<TraceRecord> trace;  // sorted by (round, agent_id)
  std::vector<CommLedger> agent_ledgers;
  ServerRun server;
};

namespace detail {

inline void check_reply(const SyncEnvelope& e, MsgType want, std::uint64_t round, std::uint32_t d) {
  if (e.type != want) {
    if (e.type == MsgType::bye) throw TransportError(std::string("peer sent BYE while waiting for ") + wire::to_string(want));
    throw TransportError(std::string("expected ") + wire::to_string(want) + ", got " + wire::to_string(e.type));
  }
  if (e.round != round) {
    throw TransportError(std::string(wire::to_string(want)) + " for round " + std::to_string(e.round) +
                         ", expected round " + std::to_string(round));
  }
  if (e.d != d) throw TransportError("peer dimension " + std::to_string(e.d) + " != " + std::to_string(d));
  wire::validate(e);
}

class AgentSession {
 public:
  AgentSession(AgentLink& link, std::uint32_t id, std::uint32_t d) : link_(link), id_(id), d_(d) {}

  void send(MsgType type, std::uint64_t round, std::vector<double> payload = {}) {
    SyncEnvelope e{type, id_, round, d_, std::move(payload)};
    ledger.on_send(e);
    link_.send(e);
  }

  SyncEnvelope expect(MsgType type, std::uint64_t round) {
    SyncEnvelope e = link_.recv();
    ledger.on_recv(e);
    if (type == MsgType::hello && e.type == MsgType::bye) {
      throw TransportError("agent " + std::to_string(id_) + " rejected by server at HELLO");
    }
    check_reply(e, type, round, d_);
    return e;
  }

  CommLedger ledger;

 private:
  AgentLink& link_;
  std::uint32_t id_;
  std::uint32_t d_;
};

class ServerSession {
 public:
  ServerSession(ServerLink& link, std::uint32_t d) : link_(link), d_(d), per_agent(link.size()) {}

  std::size_t size() const { return link_.size(); }

  void accept_hellos() {
    link_.accept_hellos();
    for (auto& l : per_agent) ++l.messages_received;
  }

  void send(std::uint32_t agent, MsgType type, std::uint64_t round, std::vector<double> payload = {}) {
    SyncEnvelope e{type, agent, round, d_, std::move(payload)};
    per_agent[agent].on_send(e);
    link_.send(agent, e);
  }

  void broadcast(MsgType type, std::uint64_t round, const std::vector<double>& payload = {}) {
    for (std::uint32_t k = 0; k < size(); ++k) send(k, type, round, payload);
  }

  SyncEnvelope expect(std::uint32_t agent, MsgType type, std::uint64_t round) {
    SyncEnvelope e = link_.recv(agent);
    per_agent[agent].on_recv(e);
    check_reply(e, type, round, d_);
    if (e.agent_id != agent) {
      throw TransportError("message from agent " + std::to_string(agent) + " carries id " +
                           std::to_string(e.agent_id));
    }
    return e;
  }

 private:
  ServerLink& link_;
  std::uint32_t d_;

 public:
  std::vector<CommLedger> per_agent;
};

inline RunError round_error(std::uint32_t agent, std::uint64_t round, const std::exception& e) {
  return RunError("agent " + std::to_string(agent) + ", round " + std::to_string(round) + ": " + e.what());
}

inline std::uint32_t dim_of(const Environment& env) { return static_cast<std::uint32_t>(env.table().dim); }

}  // namespace detail

inline void validate_params(const FederationParams& p) {
  if (p.n_agents == 0) throw ConfigError("n_agents must be >= 1");
  if (p.rounds == 0) throw ConfigError("rounds must be >= 1");
  if (!(p.lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(p.nu >= 0.0)) throw ConfigError("nu must be >= 0");
  if (!(p.D >= 0.0)) throw ConfigError("D must be >= 0");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(p.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (p.local_iters < 1) throw ConfigError("local_iters must be >= 1");
  if (!(p.init_sigma >= 0.0)) throw ConfigError("init_sigma must be >= 0");
}

inline AgentRun run_score_agent(const FederationParams& p, const Environment& env, const AgentArmView& view,
                                AgentLink& link, const AgentHooks& hooks = {}) {
  const std::uint32_t id = view.agent_id;
  const std::uint32_t d = detail::dim_of(env);
  detail::AgentSession s(link, id, d);
  s.send(MsgType::hello, 0);
  s.expect(MsgType::hello, 0);

  score::ScoreAgentState st(id, d, p.lambda);
  const std::vector<Arm> arms = env.table().arms_for(view.arm_ids);
  RandomStream noise(p.seed, id, "score-noise");
  AgentRun out;
  out.trace.reserve(p.rounds);
  double best = -std::numeric_limits<double>::infinity();

  for (std::uint64_t t = 1; t <= p.rounds; ++t) {
    TraceRecord rec;
    bool want = false;
    try {
      const score::Model model = score::refresh_model(st);
      rec.arm_id = score::select_arm(model.theta_hat, model.V, arms, p.nu);
      rec.score = env.score_feedback(rec.arm_id, noise);
      score::record_score(st, env.table().at(rec.arm_id).embedding, rec.score);
      want = score::should_sync(st, t, p.D);
      rec.instant_regret = env.instant_regret(view.arm_ids, rec.arm_id);
    } catch (const Error& e) {
      throw detail::round_error(id, t, e);
    }

    s.send(MsgType::sync_request, t, {want ? 1.0 : 0.0});
    const SyncEnvelope decision = s.expect(MsgType::sync_request, t);
    if (decision.payload[0] != 0.0) {
      score::Delta delta = score::extract_delta(st);
      std::vector<double> payload;
      payload.reserve(wire::payload_reals(MsgType::delta_upload, d));
      wire::append(payload, delta.W);
      wire::append(payload, delta.b);
      s.send(MsgType::delta_upload, t, std::move(payload));

      const SyncEnvelope bc = s.expect(MsgType::sync_broadcast, t);
      wire::PayloadReader r(bc);
      const SymMatrix W = r.matrix();
      const Vector b = r.vector();
      try {
        score::apply_sync(st, W, b, t);
      } catch (const Error& e) {
        throw detail::round_error(id, t, e);
      }
      ++s.ledger.comm_rounds;
      if (hooks.on_score_sync) hooks.on_score_sync(t, st);
    }

    best = std::max(best, rec.score);
    rec.round = t;
    rec.agent_id = id;
    rec.best_score_so_far = best;
    rec.comm_rounds = s.ledger.comm_rounds;
    rec.payload_bytes = s.ledger.bytes_total();
    out.trace.push_back(rec);
  }
  s.send(MsgType::bye, p.rounds);
  out.ledger = s.ledger;
  return out;
}

inline ServerRun run_score_server(const FederationParams& p, std::uint32_t d, ServerLink& link) {
  detail::ServerSession s(link, d);
  s.accept_hellos();
  s.broadcast(MsgType::hello, 0);

  const std::size_t n = s.size();
  std::vector<std::uint32_t> ids(n);
  for (std::uint32_t k = 0; k < n; ++k) ids[k] = k;
  score::ScoreServerState server(d, ids);
  ServerRun out;

  for (std::uint64_t t = 1; t <= p.rounds; ++t) {
    bool any = false;
    for (std::uint32_t k = 0; k < n; ++k) any |= s.expect(k, MsgType::sync_request, t).payload[0] != 0.0;
    s.broadcast(MsgType::sync_request, t, {any ? 1.0 : 0.0});
    if (!any) continue;

    std::vector<score::Delta> deltas(n);
    for (std::uint32_t k = 0; k < n; ++k) {
      const SyncEnvelope e = s.expect(k, MsgType::delta_upload, t);
      wire::PayloadReader r(e);
      deltas[k].W = r.matrix();
      deltas[k].b = r.vector();
    }
    const score::Delta bc = score::server_aggregate(server, deltas);
    std::vector<double> payload;
    payload.reserve(wire::payload_reals(MsgType::sync_broadcast, d));
    wire::append(payload, bc.W);
    wire::append(payload, bc.b);
    s.broadcast(MsgType::sync_broadcast, t, payload);
    ++out.comm_rounds;
    for (auto& l : s.per_agent) ++l.comm_rounds;
  }
  for (std::uint32_t k = 0; k < n; ++k) s.expect(k, MsgType::bye, p.rounds);
  out.per_agent = s.per_agent;
  return out;
}

inline AgentRun run_pref_agent(const FederationParams& p, const Environment& env, const AgentArmView& view,
                               AgentLink& link, const AgentHooks& hooks = {}) {
  const std::uint32_t id = view.agent_id;
  const std::uint32_t d = detail::dim_of(env);
  detail::AgentSession s(link, id, d);
  s.send(MsgType::hello, 0);
  s.expect(MsgType::hello, 0);

  Vector theta_global;
  SymMatrix W_sync;
  {
    const SyncEnvelope init = s.expect(MsgType::model_broadcast, 0);
    wire::PayloadReader r(init);
    theta_global = r.vector();
    W_sync = r.matrix();
  }

  pref::PrefAgentState st(id, d, p.lambda);
  const pref::BetaSchedule schedule{p.delta, static_cast<double>(d), p.lambda, static_cast<double>(p.n_agents)};
  const std::vector<Arm> arms = env.table().arms_for(view.arm_ids);
  RandomStream duel_rng(p.seed, id, "preference");
  const SymMatrix ridge = identity_scaled(d, p.lambda);
  AgentRun out;
  out.trace.reserve(p.rounds);
  double best = -std::numeric_limits<double>::infinity();

  for (std::uint64_t t = 1; t <= p.rounds; ++t) {
    TraceRecord rec;
    try {
      const double beta = pref::beta_at(schedule, t);
      const pref::DuelChoice duel = pref::select_duel(theta_global, ridge + W_sync, arms, beta);
      const int won = env.preference_feedback(duel.first, duel.second, duel_rng);
      pref::accumulate_pair(st, env.table().at(duel.first).embedding, env.table().at(duel.second).embedding, won);
      pref::local_update(st, theta_global, p.lr, p.local_iters);
      pref::drift_update(st, theta_global);
      rec.arm_id = duel.first;
      rec.arm_id_2 = duel.second;
      rec.outcome = won;
      rec.score = env.true_score(duel.first);
      rec.instant_regret = env.instant_regret(view.arm_ids, duel.first);
    } catch (const Error& e) {
      throw detail::round_error(id, t, e);
    }

    std::vector<double> payload;
    payload.reserve(wire::payload_reals(MsgType::pref_upload, d));
    wire::append(payload, st.theta_local);
    wire::append(payload, st.drift_grad);
    wire::append(payload, st.W_new);
    s.send(MsgType::pref_upload, t, std::move(payload));

    const SyncEnvelope bc = s.expect(MsgType::model_broadcast, t);
    wire::PayloadReader r(bc);
    theta_global = r.vector();
    W_sync = r.matrix();
    ++s.ledger.comm_rounds;
    if (hooks.on_pref_round) hooks.on_pref_round(t, st, theta_global);

    best = std::max(best, rec.score);
    rec.round = t;
    rec.agent_id = id;
    rec.best_score_so_far = best;
    rec.comm_rounds = s.ledger.comm_rounds;
    rec.payload_bytes = s.ledger.bytes_total();
    out.trace.push_back(rec);
  }
  s.send(MsgType::bye, p.rounds);
  out.ledger = s.ledger;
  return out;
}

// theta_0 ~ N(0, init_sigma^2 I), drawn once by the server.
inline Vector initial_global_model(const FederationParams& p, std::uint32_t d) {
  RandomStream rng(p.seed, kGlobalStream, "theta-init");
  Vector theta(d);
  for (std::uint32_t j = 0; j < d; ++j) theta[j] = p.init_sigma * rng.normal();
  return theta;
}

inline ServerRun run_pref_server(const FederationParams& p, std::uint32_t d, ServerLink& link) {
  detail::ServerSession s(link, d);
  s.accept_hellos();
  s.broadcast(MsgType::hello, 0);

  const std::size_t n = s.size();
  pref::PrefServerState server(d, p.lambda, n, initial_global_model(p, d));
  auto model_payload = [&] {
    std::vector<double> payload;
    payload.reserve(wire::payload_reals(MsgType::model_broadcast, d));
    wire::append(payload, server.theta_global);
    wire::append(payload, server.W_sync);
    return payload;
  };
  s.broadcast(MsgType::model_broadcast, 0, model_payload());
  ServerRun out;

  for (std::uint64_t t = 1; t <= p.rounds; ++t) {
    std::vector<pref::PrefUpload> uploads(n);
    for (std::uint32_t k = 0; k < n; ++k) {
      const SyncEnvelope e = s.expect(k, MsgType::pref_upload, t);
      wire::PayloadReader r(e);
      uploads[k].theta_local = r.vector();
      uploads[k].drift_grad = r.vector();
      uploads[k].W_new = r.matrix();
    }
    pref::server_round(server, uploads);
    s.broadcast(MsgType::model_broadcast, t, model_payload());
    ++out.comm_rounds;
    for (auto& l : s.per_agent) ++l.comm_rounds;
  }
  for (std::uint32_t k = 0; k < n; ++k) s.expect(k, MsgType::bye, p.rounds);
  out.per_agent = s.per_agent;
  return out;
}

inline AgentRun run_agent(const FederationParams& p, const Environment& env, const AgentArmView& view,
                          AgentLink& link, const AgentHooks& hooks = {}) {
  return p.algo == Algo::fedpob ? run_score_agent(p, env, view, link, hooks)
                                : run_pref_agent(p, env, view, link, hooks);
}

inline ServerRun run_server(const FederationParams& p, std::uint32_t d, ServerLink& link) {
  return p.algo == Algo::fedpob ? run_score_server(p, d, link) : run_pref_server(p, d, link);
}

namespace detail {

// Runs the server and every agent on their own threads. On the first failure
// `abort` is called so blocked peers unwind; the root-cause error (anything
// that is not a TransportError, if present) is rethrown.
template <class ServerFn, class AgentFn>
RunResult run_threads(std::size_t n, ServerFn server_fn, AgentFn agent_fn, const std::function<void()>& abort) {
  std::mutex mu;
  std::vector<std::exception_ptr> errors;
  auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(mu);
      errors.push_back(e);
    }
    abort();
  };

  ServerRun server;
  std::vector<AgentRun> agents(n);
  {
    std::vector<std::jthread> threads;
    threads.reserve(n + 1);
    threads.emplace_back([&] {
      try {
        server = server_fn();
      } catch (...) {
        fail(std::current_exception());
      }
    });
    for (std::uint32_t k = 0; k < n; ++k) {
      threads.emplace_back([&, k] {
        try {
          agents[k] = agent_fn(k);
        } catch (...) {
          fail(std::current_exception());
        }
      });
    }
  }

  if (!errors.empty()) {
    for (const auto& e : errors) {
      try {
        std::rethrow_exception(e);
      } catch (const TransportError&) {
      } catch (...) {
        throw;
      }
    }
    std::rethrow_exception(errors.front());
  }

  RunResult out;
  out.server = std::move(server);
  for (auto& a : agents) {
    out.trace.insert(out.trace.end(), a.trace.begin(), a.trace.end());
    out.agent_ledgers.push_back(a.ledger);
  }
  sort_trace(out.trace);
  return out;
}

inline void check_views(const FederationParams& p, const std::vector<AgentArmView>& views) {
  if (views.size() != p.n_agents) {
    throw ConfigError("expected " + std::to_string(p.n_agents) + " agent views, got " + std::to_string(views.size()));
  }
  for (std::uint32_t k = 0; k < views.size(); ++k) {
    if (views[k].agent_id != k) throw ConfigError("agent views must be ordered by agent id");
  }
}

}  // namespace detail

inline RunResult run_inproc(const FederationParams& p, const Environment& env, const std::vector<AgentArmView>& views,
                            const AgentHooks& hooks = {}) {
  validate_params(p);
  detail::check_views(p, views);
  InProcBus bus(p.n_agents);
  const std::uint32_t d = detail::dim_of(env);
  return detail::run_threads(
      p.n_agents,
      [&] {
        auto link = bus.server_end();
        return run_server(p, d, link);
      },
      [&](std::uint32_t k) {
        auto link = bus.agent_end(k);
        return run_agent(p, env, views[k], link, hooks);
      },
      [&] { bus.close(); });
}

// Same run over TCP on the loopback interface, server and agents in this
// process.
inline RunResult run_loopback(const FederationParams& p, const Environment& env, const std::vector<AgentArmView>& views,
                              const AgentHooks& hooks = {},
                              std::chrono::milliseconds timeout = std::chrono::milliseconds(10000)) {
  validate_params(p);
  detail::check_views(p, views);
  const std::uint32_t d = detail::dim_of(env);
  net::Socket listener = net::listen_on(net::Address{"127.0.0.1", 0});
  const net::Address addr{"127.0.0.1", net::local_port(listener)};
  // Agents are told to stop retrying once the server has given up.
  std::atomic<bool> aborted{false};
  return detail::run_threads(
      p.n_agents,
      [&] {
        net::TcpServerLink link(std::move(listener), p.n_agents, timeout);
        return run_server(p, d, link);
      },
      [&](std::uint32_t k) {
        if (aborted) throw TransportError("run aborted");
        auto link = net::TcpAgentLink::connect(addr, timeout);
        return run_agent(p, env, views[k], link, hooks);
      },
      [&] { aborted = true; });
}

inline RunResult run_federation(const FederationParams& p, const Environment& env,
                                const std::vector<AgentArmView>& views, Transport transport,
                                const AgentHooks& hooks = {}) {
  return transport == Transport::inproc ? run_inproc(p, env, views, hooks) : run_loopback(p, env, views, hooks);
}

// Separate-process deployment: one server process, one process per agent.
inline ServerRun serve(const FederationParams& p, std::uint32_t d, const net::Address& bind,
                       std::chrono::milliseconds startup_timeout) {
  validate_params(p);
  net::TcpServerLink link(net::listen_on(bind), p.n_agents, startup_timeout);
  return run_server(p, d, link);
}

inline AgentRun connect(const FederationParams& p, const Environment& env, const AgentArmView& view,
                        const net::Address& server, std::chrono::milliseconds timeout) {
  validate_params(p);
  auto link = net::TcpAgentLink::connect(server, timeout);
  return run_agent(p, env, view, link);
}

}  // namespace fedpob
