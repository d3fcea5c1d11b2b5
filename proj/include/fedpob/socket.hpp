#pragma once

// TCP transport. One connection per agent; frames as in envelope.hpp.
// A dropped connection is fatal for the run.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedpob/csv.hpp"
#include "fedpob/envelope.hpp"
#include "fedpob/errors.hpp"
#include "fedpob/transport.hpp"

namespace fedpob::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void reset() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

struct Address {
  std::string host;
  std::uint16_t port = 0;
};

// "host:port"; a bare ":port" binds/connects to 127.0.0.1.
inline Address parse_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address must be host:port, got '" + text + "'");
  Address a;
  a.host = text.substr(0, colon);
  if (a.host.empty()) a.host = "127.0.0.1";
  const auto port = csv::parse_int<std::uint16_t>(text.substr(colon + 1));
  if (!port) throw ConfigError("bad port in address '" + text + "'");
  a.port = *port;
  return a;
}

inline std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

inline sockaddr_in resolve(const Address& a) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(a.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw TransportError("cannot resolve host '" + a.host + "'");
  }
  sockaddr_in sa = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  sa.sin_port = htons(a.port);
  return sa;
}

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

inline Socket listen_on(const Address& a, int backlog = 64) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const sockaddr_in sa = resolve(a);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) != 0) {
    throw TransportError(errno_text("bind"));
  }
  if (::listen(s.fd(), backlog) != 0) throw TransportError(errno_text("listen"));
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len) != 0) {
    throw TransportError(errno_text("getsockname"));
  }
  return ntohs(sa.sin_port);
}

// Retries refused connections until the deadline so agents may start before
// the server is listening.
inline Socket connect_to(const Address& a, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const sockaddr_in sa = resolve(a);
  while (true) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw TransportError(errno_text("socket"));
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&sa), sizeof sa) == 0) {
      set_nodelay(s.fd());
      return s;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError(errno_text(("connect to " + a.host + ":" + std::to_string(a.port)).c_str()));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

inline void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

inline void read_exact(int fd, std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) throw TransportError("connection closed by peer");
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("recv"));
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

inline bool wait_readable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (rc < 0 && errno != EINTR) throw TransportError(errno_text("poll"));
  return rc > 0;
}

inline void send_envelope(int fd, const SyncEnvelope& e) {
  const auto bytes = wire::encode_envelope(e);
  write_all(fd, bytes.data(), bytes.size());
}

inline SyncEnvelope recv_envelope(int fd) {
  std::vector<std::uint8_t> header(wire::kHeaderSize);
  read_exact(fd, header.data(), header.size());
  const wire::FrameHeader h = wire::decode_header(header);
  std::vector<std::uint8_t> payload(h.payload_len);
  read_exact(fd, payload.data(), payload.size());
  return wire::decode_payload(h, payload);
}

class TcpAgentLink final : public AgentLink {
 public:
  explicit TcpAgentLink(Socket s) : sock_(std::move(s)) {}

  static TcpAgentLink connect(const Address& a, std::chrono::milliseconds timeout) {
    return TcpAgentLink(connect_to(a, timeout));
  }

  void send(const SyncEnvelope& e) override { send_envelope(sock_.fd(), e); }
  SyncEnvelope recv() override { return recv_envelope(sock_.fd()); }

 private:
  Socket sock_;
};

class TcpServerLink final : public ServerLink {
 public:
  TcpServerLink(Socket listener, std::size_t n_agents, std::chrono::milliseconds startup_timeout)
      : listener_(std::move(listener)), conns_(n_agents), timeout_(startup_timeout) {}

  std::size_t size() const override { return conns_.size(); }

  std::uint16_t port() const { return local_port(listener_); }

  // Accepts connections until every id in [0, n) has sent HELLO. Duplicate or
  // out-of-range ids get BYE and are dropped.
  void accept_hellos() override {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::size_t joined = 0;
    auto remaining = [&] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    };
    while (joined < conns_.size()) {
      const auto left = remaining();
      if (left.count() <= 0 || !wait_readable(listener_.fd(), left)) {
        throw TransportError("startup timeout: " + std::to_string(joined) + " of " +
                             std::to_string(conns_.size()) + " agents connected");
      }
      Socket s(::accept(listener_.fd(), nullptr, nullptr));
      if (!s.valid()) continue;
      set_nodelay(s.fd());
      const auto left2 = remaining();
      if (left2.count() <= 0 || !wait_readable(s.fd(), left2)) continue;
      SyncEnvelope hello;
      try {
        hello = recv_envelope(s.fd());
      } catch (const Error&) {
        continue;
      }
      const bool ok = hello.type == MsgType::hello && hello.agent_id < conns_.size() &&
                      !conns_[hello.agent_id].valid();
      if (!ok) {
        try {
          send_envelope(s.fd(), SyncEnvelope{MsgType::bye, hello.agent_id, 0, hello.d, {}});
        } catch (const Error&) {
        }
        continue;
      }
      conns_[hello.agent_id] = std::move(s);
      ++joined;
    }
  }

  void send(std::uint32_t agent, const SyncEnvelope& e) override { send_envelope(conn(agent), e); }
  SyncEnvelope recv(std::uint32_t agent) override { return recv_envelope(conn(agent)); }

 private:
  int conn(std::uint32_t agent) const {
    if (agent >= conns_.size() || !conns_[agent].valid()) {
      throw TransportError("no connection for agent " + std::to_string(agent));
    }
    return conns_[agent].fd();
  }

  Socket listener_;
  std::vector<Socket> conns_;
  std::chrono::milliseconds timeout_;
};

}  // namespace fedpob::net
