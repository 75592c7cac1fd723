#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <functional>
#include <list>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

#include "posefuse/harness/codec.hpp"
#include "posefuse/keypoints.hpp"

namespace posefuse::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

namespace detail {

[[noreturn]] inline void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

// Waits up to timeout_ms for fd to become readable. False on timeout.
inline bool wait_readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  const int r = ::poll(&p, 1, timeout_ms);
  if (r < 0 && errno != EINTR) throw_errno("poll");
  return r > 0;
}

}  // namespace detail

struct ListenerStats {
  std::size_t connections = 0;
  std::size_t batches = 0;
  std::size_t decode_errors = 0;
};

/// Accepts device connections and decodes length-prefixed frames into
/// batches. Each connection gets its own reader thread; decoded batches go to
/// the sink, which must be thread-safe (SyncQueue::push is).
class TcpListener {
 public:
  using Sink = std::function<void(MeasurementBatch)>;

  /// port 0 picks an ephemeral port; see port().
  TcpListener(std::uint16_t port, Sink sink, const std::string& bind_address = "0.0.0.0")
      : sink_(std::move(sink)) {
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock_.valid()) detail::throw_errno("socket");
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_address.c_str(), &addr.sin_addr) != 1)
      throw std::invalid_argument("bad bind address: " + bind_address);
    if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) detail::throw_errno("bind");
    if (::listen(sock_.fd(), 16) < 0) detail::throw_errno("listen");
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::jthread([this](std::stop_token st) { accept_loop(st); });
  }

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() { stop(); }

  std::uint16_t port() const { return port_; }

  /// Live connections right now.
  int open_connections() const { return open_.load(); }

  /// True once at least one device connected and all have since closed.
  bool drained() const { return stats().connections > 0 && open_.load() == 0; }

  ListenerStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  void stop() {
    acceptor_.request_stop();
    if (acceptor_.joinable()) acceptor_.join();
    std::list<std::jthread> workers;
    {
      std::lock_guard lock(mu_);
      workers.swap(workers_);
    }
    workers.clear();  // jthread requests stop and joins
  }

 private:
  void accept_loop(std::stop_token st) {
    while (!st.stop_requested()) {
      if (!detail::wait_readable(sock_.fd(), 50)) continue;
      Socket conn(::accept(sock_.fd(), nullptr, nullptr));
      if (!conn.valid()) continue;
      ++open_;
      std::lock_guard lock(mu_);
      ++stats_.connections;
      workers_.emplace_back([this, c = std::move(conn)](std::stop_token wst) mutable { read_loop(std::move(c), wst); });
    }
  }

  void read_loop(Socket conn, std::stop_token st) {
    harness::FrameReader reader;
    std::vector<std::uint8_t> buf(64 * 1024);
    while (!st.stop_requested()) {
      if (!detail::wait_readable(conn.fd(), 50)) continue;
      const ssize_t n = ::recv(conn.fd(), buf.data(), buf.size(), 0);
      if (n == 0) break;
      if (n < 0) {
        if (errno == EINTR) continue;
        break;
      }
      reader.feed(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
      try {
        while (auto batch = reader.next()) {
          sink_(std::move(*batch));
          std::lock_guard lock(mu_);
          ++stats_.batches;
        }
      } catch (const harness::DecodeError&) {
        // A corrupt frame loses framing for the rest of the stream.
        std::lock_guard lock(mu_);
        ++stats_.decode_errors;
        break;
      }
    }
    --open_;
  }

  Sink sink_;
  Socket sock_;
  std::uint16_t port_ = 0;
  std::atomic<int> open_{0};
  mutable std::mutex mu_;
  ListenerStats stats_;
  std::list<std::jthread> workers_;
  std::jthread acceptor_;
};

/// One device's connection to an aggregator.
class TcpSender {
 public:
  TcpSender(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
      throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
    for (auto* ai = res; ai; ai = ai->ai_next) {
      Socket s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
      if (s.valid() && ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
        sock_ = std::move(s);
        break;
      }
    }
    ::freeaddrinfo(res);
    if (!sock_.valid()) detail::throw_errno("connect to " + host + ":" + service);
    int one = 1;
    ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  void send(const MeasurementBatch& batch) { send_bytes(harness::encode(batch)); }

  /// Raw bytes, already framed.
  void send_bytes(std::span<const std::uint8_t> bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(sock_.fd(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        detail::throw_errno("send");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void close() { sock_.close(); }

 private:
  Socket sock_;
};

}  // namespace posefuse::net
