#pragma once

// Message links between agents and the server, plus the in-process bus.
// The round logic in runtime.hpp only ever talks to these interfaces, so both
// transports run the exact same code.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "fedpob/envelope.hpp"
#include "fedpob/errors.hpp"

namespace fedpob {

using wire::MsgType;
using wire::SyncEnvelope;

class AgentLink {
 public:
  virtual ~AgentLink() = default;
  virtual void send(const SyncEnvelope& e) = 0;
  virtual SyncEnvelope recv() = 0;
};

class ServerLink {
 public:
  virtual ~ServerLink() = default;
  virtual std::size_t size() const = 0;
  // Blocks until every agent 0..size()-1 has said HELLO exactly once.
  virtual void accept_hellos() = 0;
  virtual void send(std::uint32_t agent, const SyncEnvelope& e) = 0;
  virtual SyncEnvelope recv(std::uint32_t agent) = 0;
};

// Per-round traffic counters from one endpoint's point of view.
struct CommLedger {
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t bytes_sent = 0;  // payload bytes only
  std::uint64_t bytes_received = 0;
  std::uint64_t comm_rounds = 0;

  void on_send(const SyncEnvelope& e) {
    ++messages_sent;
    bytes_sent += e.payload_bytes();
  }
  void on_recv(const SyncEnvelope& e) {
    ++messages_received;
    bytes_received += e.payload_bytes();
  }
  std::uint64_t bytes_total() const { return bytes_sent + bytes_received; }

  bool operator==(const CommLedger&) const = default;
};

// Closing wakes every waiter with TransportError; used to abort a run when
// any participant fails.
template <class T>
class BlockingQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      if (closed_) throw TransportError("in-process bus closed");
      items_.push_back(std::move(v));
    }
    cv_.notify_one();
  }

  T pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) throw TransportError("in-process bus closed");
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

class InProcBus {
 public:
  explicit InProcBus(std::size_t n_agents) : up_(n_agents), down_(n_agents) {
    for (std::size_t k = 0; k < n_agents; ++k) {
      up_[k] = std::make_unique<BlockingQueue<SyncEnvelope>>();
      down_[k] = std::make_unique<BlockingQueue<SyncEnvelope>>();
    }
  }

  std::size_t size() const { return up_.size(); }

  void close() {
    for (auto& q : up_) q->close();
    for (auto& q : down_) q->close();
  }

  class AgentEnd final : public AgentLink {
   public:
    AgentEnd(InProcBus& bus, std::uint32_t id) : bus_(bus), id_(id) {}
    void send(const SyncEnvelope& e) override { bus_.up_.at(id_)->push(e); }
    SyncEnvelope recv() override { return bus_.down_.at(id_)->pop(); }

   private:
    InProcBus& bus_;
    std::uint32_t id_;
  };

  class ServerEnd final : public ServerLink {
   public:
    explicit ServerEnd(InProcBus& bus) : bus_(bus) {}
    std::size_t size() const override { return bus_.size(); }

    void accept_hellos() override {
      for (std::uint32_t k = 0; k < bus_.size(); ++k) {
        const SyncEnvelope e = recv(k);
        if (e.type != MsgType::hello || e.agent_id != k) {
          throw TransportError("in-process bus: expected HELLO from agent " + std::to_string(k));
        }
      }
    }

    void send(std::uint32_t agent, const SyncEnvelope& e) override { bus_.down_.at(agent)->push(e); }
    SyncEnvelope recv(std::uint32_t agent) override { return bus_.up_.at(agent)->pop(); }

   private:
    InProcBus& bus_;
  };

  AgentEnd agent_end(std::uint32_t id) { return AgentEnd(*this, id); }
  ServerEnd server_end() { return ServerEnd(*this); }

 private:
  std::vector<std::unique_ptr<BlockingQueue<SyncEnvelope>>> up_;
  std::vector<std::unique_ptr<BlockingQueue<SyncEnvelope>>> down_;
};

}  // namespace fedpob
