/*
 * Copyright 2026 The Fedgraph Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <poll.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "fedgraph/errors.hpp"
#include "fedgraph/params.hpp"
#include "fedgraph/wire.hpp"

namespace fedgraph {

enum class MsgType : std::uint8_t {
  INIT = 0,
  WEIGHTS = 1,
  RESULT = 2,
  STATS_REQ = 3,
  STATS = 4,
  DONE = 5,
  ERR = 6,
};

/// One client's reply to a round. `has_store` is false for a declared
/// "no stats" reply; `error` is set for ERR replies and timeouts.
struct ClientReply {
  std::uint16_t client_id = 0;
  MsgType type = MsgType::ERR;
  bool has_store = false;
  ParamStore store;
  std::vector<double> losses;
  std::string error;

  bool ok() const { return type != MsgType::ERR && error.empty(); }
};

/// Server-side view of the client fleet: broadcast weights, then gather one
/// reply per client (the round barrier).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::size_t n_clients() const = 0;
  virtual void broadcast(MsgType type, std::uint32_t round, const ParamStore& store) = 0;
  virtual std::vector<ClientReply> collect(std::uint32_t round) = 0;
  virtual void shutdown() = 0;
};

// ---------------------------------------------------------------------------
// Length-prefixed frames over TCP
//
// Frame: u32 payload length (LE), u8 msg_type, u32 round, u16 client_id,
// payload. Payloads: WEIGHTS/STATS_REQ carry a store frame; RESULT carries
// u32 loss count + f64 losses + store frame; STATS carries u8 has_store
// [+ store frame]; ERR carries a message string; INIT and DONE are empty.

namespace netdetail {

inline void write_all(int fd, const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::ClientError, std::string("send failed: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

/// Returns false on clean timeout; throws on hard errors or EOF.
inline bool read_all(int fd, void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  while (n > 0) {
    const ssize_t r = ::recv(fd, p, n, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) return false;
      throw Error(Errc::ClientError, std::string("recv failed: ") + std::strerror(errno));
    }
    if (r == 0) throw Error(Errc::ClientError, "connection closed");
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

struct Frame {
  MsgType type = MsgType::ERR;
  std::uint32_t round = 0;
  std::uint16_t client_id = 0;
  std::vector<std::uint8_t> payload;
};

inline void send_frame(int fd, const Frame& f) {
  std::vector<std::uint8_t> header;
  detail::put_u32(header, static_cast<std::uint32_t>(f.payload.size()));
  header.push_back(static_cast<std::uint8_t>(f.type));
  detail::put_u32(header, f.round);
  detail::put_u16(header, f.client_id);
  write_all(fd, header.data(), header.size());
  if (!f.payload.empty()) write_all(fd, f.payload.data(), f.payload.size());
}

/// Returns false on timeout before any byte arrived.
inline bool recv_frame(int fd, Frame& out) {
  std::uint8_t header[11];
  if (!read_all(fd, header, sizeof(header))) return false;
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(header[i]) << (8 * i);
  if (header[4] > static_cast<std::uint8_t>(MsgType::ERR)) {
    throw Error(Errc::MalformedFrame, "unknown message type");
  }
  out.type = static_cast<MsgType>(header[4]);
  out.round = 0;
  for (int i = 0; i < 4; ++i) out.round |= static_cast<std::uint32_t>(header[5 + i]) << (8 * i);
  out.client_id = static_cast<std::uint16_t>(header[9] | (header[10] << 8));
  if (len > (1u << 30)) throw Error(Errc::MalformedFrame, "oversized frame");
  out.payload.resize(len);
  if (len > 0 && !read_all(fd, out.payload.data(), len)) {
    throw Error(Errc::ClientTimeout, "timed out mid-frame");
  }
  return true;
}

inline std::vector<std::uint8_t> encode_result_payload(const ParamStore& store,
                                                       const std::vector<double>& losses) {
  std::vector<std::uint8_t> payload;
  detail::put_u32(payload, static_cast<std::uint32_t>(losses.size()));
  for (double v : losses) detail::put_f64(payload, v);
  const auto store_bytes = serialize(store);
  payload.insert(payload.end(), store_bytes.begin(), store_bytes.end());
  return payload;
}

inline void decode_result_payload(const std::vector<std::uint8_t>& payload, ParamStore& store,
                                  std::vector<double>& losses) {
  detail::Reader r(payload.data(), payload.size());
  const std::uint32_t n = r.u32();
  losses.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) losses[i] = r.f64();
  std::vector<std::uint8_t> rest(payload.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                                 payload.end());
  store = deserialize(rest);
}

inline void set_recv_timeout(int fd, int timeout_ms) {
  timeval tv;
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

}  // namespace netdetail

/// Socket-backed transport. Binds, waits for N INIT handshakes, then runs
/// the broadcast/collect protocol with a per-reply receive deadline.
class TcpServerTransport : public Transport {
 public:
  TcpServerTransport(std::uint16_t port, std::size_t n_clients, int timeout_ms = 30000)
      : n_clients_(n_clients), timeout_ms_(timeout_ms) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(Errc::IoError, "socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      throw Error(Errc::IoError, std::string("bind failed: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    if (::listen(listen_fd_, static_cast<int>(n_clients)) != 0) {
      throw Error(Errc::IoError, "listen failed");
    }
  }

  ~TcpServerTransport() override {
    for (auto& [id, fd] : clients_) ::close(fd);
    if (listen_fd_ >= 0) ::close(listen_fd_);
  }

  std::uint16_t port() const { return port_; }

  /// Block until all N clients have sent INIT, up to the receive deadline.
  /// accept(2) ignores SO_RCVTIMEO, so the wait goes through poll.
  void accept_clients() {
    while (clients_.size() < n_clients_) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, timeout_ms_);
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::IoError, "poll failed");
      }
      if (ready == 0) {
        throw Error(Errc::ClientTimeout,
                    "only " + std::to_string(clients_.size()) + " of " +
                        std::to_string(n_clients_) + " clients connected before the deadline");
      }
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::IoError, "accept failed");
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      netdetail::set_recv_timeout(fd, timeout_ms_);
      netdetail::Frame init;
      if (!netdetail::recv_frame(fd, init) || init.type != MsgType::INIT) {
        ::close(fd);
        throw Error(Errc::MalformedFrame, "expected INIT handshake");
      }
      if (clients_.count(init.client_id)) {
        ::close(fd);
        throw Error(Errc::MalformedFrame, "duplicate client id");
      }
      clients_[init.client_id] = fd;
    }
  }

  std::size_t n_clients() const override { return n_clients_; }

  void broadcast(MsgType type, std::uint32_t round, const ParamStore& store) override {
    if (clients_.size() < n_clients_) accept_clients();
    netdetail::Frame f;
    f.type = type;
    f.round = round;
    f.payload = serialize(store);
    for (auto& [id, fd] : clients_) {
      f.client_id = id;
      netdetail::send_frame(fd, f);
    }
  }

  std::vector<ClientReply> collect(std::uint32_t round) override {
    std::vector<ClientReply> replies;
    for (auto& [id, fd] : clients_) {  // std::map iterates in client-id order
      ClientReply reply;
      reply.client_id = id;
      netdetail::Frame f;
      try {
        if (!netdetail::recv_frame(fd, f)) {
          reply.type = MsgType::ERR;
          reply.error = "ClientTimeout: no reply for round " + std::to_string(round);
          replies.push_back(std::move(reply));
          continue;
        }
        reply.type = f.type;
        if (f.type == MsgType::RESULT) {
          netdetail::decode_result_payload(f.payload, reply.store, reply.losses);
          reply.has_store = true;
        } else if (f.type == MsgType::STATS) {
          detail::Reader r(f.payload.data(), f.payload.size());
          reply.has_store = r.u8() == 1;
          if (reply.has_store) {
            std::vector<std::uint8_t> rest(f.payload.begin() + 1, f.payload.end());
            reply.store = deserialize(rest);
          }
        } else if (f.type == MsgType::ERR) {
          reply.error.assign(f.payload.begin(), f.payload.end());
          if (reply.error.empty()) reply.error = "client error";
        } else {
          reply.type = MsgType::ERR;
          reply.error = "unexpected message type";
        }
      } catch (const Error& e) {
        reply.type = MsgType::ERR;
        reply.error = e.what();
      }
      replies.push_back(std::move(reply));
    }
    return replies;
  }

  void shutdown() override {
    netdetail::Frame f;
    f.type = MsgType::DONE;
    for (auto& [id, fd] : clients_) {
      f.client_id = id;
      try {
        netdetail::send_frame(fd, f);
      } catch (const Error&) {
        // client already gone; shutdown is best effort
      }
    }
  }

 private:
  std::size_t n_clients_;
  int timeout_ms_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::map<std::uint16_t, int> clients_;
};

}  // namespace fedgraph
