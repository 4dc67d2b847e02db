// Copyright 2026 The channelrpc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "chrpc/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace chrpc {

namespace {

[[noreturn]] void transport_fault(std::string detail) {
  raise(FaultKind::kTransport, Phase::kRequest, "", std::move(detail));
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  std::string h = host.empty() || host == "localhost" ? "127.0.0.1" : host;
  if (inet_pton(AF_INET, h.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  addrinfo* res = nullptr;
  if (getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || !res) {
    transport_fault("cannot resolve host " + host);
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return sa;
}

class Fd {
 public:
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    auto w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    p += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

// Returns false on EOF, error or deadline.
bool read_all(int fd, std::uint8_t* p, std::size_t n, int timeout_ms) {
  while (n > 0) {
    pollfd pfd{fd, POLLIN, 0};
    int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return false;
    auto r = ::recv(fd, p, n, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

bool write_frame(int fd, const Bytes& frame) {
  Bytes prefix;
  ByteWriter(prefix).u32(static_cast<std::uint32_t>(frame.size()));
  return write_all(fd, prefix.data(), prefix.size()) && write_all(fd, frame.data(), frame.size());
}

constexpr std::uint32_t kMaxFrame = 64u << 20;

std::optional<Bytes> read_frame(int fd, int timeout_ms) {
  std::uint8_t prefix[4];
  if (!read_all(fd, prefix, 4, timeout_ms)) return std::nullopt;
  std::uint32_t len = (std::uint32_t{prefix[0]} << 24) | (std::uint32_t{prefix[1]} << 16) |
                      (std::uint32_t{prefix[2]} << 8) | prefix[3];
  if (len > kMaxFrame) return std::nullopt;
  Bytes body(len);
  if (len && !read_all(fd, body.data(), len, timeout_ms)) return std::nullopt;
  return body;
}

int bind_socket(int type, const std::string& host, std::uint16_t port, std::uint16_t& bound) {
  int fd = ::socket(AF_INET, type, 0);
  if (fd < 0) transport_fault(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto sa = resolve(host, port);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    int err = errno;
    ::close(fd);
    transport_fault("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(err));
  }
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  bound = ntohs(sa.sin_port);
  return fd;
}

}  // namespace

// Loopback

void LoopbackNetwork::listen(const std::string& object, FrameHandler handler) {
  std::lock_guard lk(mu_);
  listeners_[object] = std::move(handler);
}

void LoopbackNetwork::unlisten(const std::string& object) {
  std::lock_guard lk(mu_);
  listeners_.erase(object);
}

bool LoopbackNetwork::listening(const std::string& object) const {
  std::lock_guard lk(mu_);
  return listeners_.count(object) > 0;
}

bool LoopbackNetwork::observe(const std::string& object, Bytes& frame, bool reply) {
  std::chrono::milliseconds d{0};
  bool keep = true;
  {
    std::lock_guard lk(mu_);
    auto n = ++seen_;
    if (auto it = corrupt_.find(n); it != corrupt_.end() && !frame.empty()) {
      frame[it->second % frame.size()] ^= 0xFF;
    }
    capture_.push_back(Captured{n, object, frame, reply});
    keep = drop_.count(n) == 0;
    d = delay_;
  }
  if (d.count() > 0) std::this_thread::sleep_for(d);
  return keep;
}

void LoopbackNetwork::send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) {
  FrameHandler handler;
  {
    std::lock_guard lk(mu_);
    if (fail_connects_ > 0) {
      --fail_connects_;
      transport_fault("connection refused (injected): " + to.to_string());
    }
    auto it = listeners_.find(to.object);
    if (it == listeners_.end()) transport_fault("connection refused: " + to.to_string());
    handler = it->second;
  }
  if (!observe(to.object, frame, false)) return;
  auto reply = handler(std::move(frame));
  if (!reply || !opts.expect_reply) return;
  if (!observe(to.object, *reply, true)) return;
  if (on_reply) on_reply(std::move(*reply));
}

void LoopbackNetwork::drop_nth(std::uint64_t n) {
  std::lock_guard lk(mu_);
  drop_.insert(n);
}

void LoopbackNetwork::corrupt_byte(std::uint64_t n, std::size_t k) {
  std::lock_guard lk(mu_);
  corrupt_[n] = k;
}

void LoopbackNetwork::delay(std::chrono::milliseconds d) {
  std::lock_guard lk(mu_);
  delay_ = d;
}

void LoopbackNetwork::fail_connects(int n) {
  std::lock_guard lk(mu_);
  fail_connects_ = n;
}

void LoopbackNetwork::clear_faults() {
  std::lock_guard lk(mu_);
  drop_.clear();
  corrupt_.clear();
  delay_ = std::chrono::milliseconds{0};
  fail_connects_ = 0;
}

std::uint64_t LoopbackNetwork::frames_seen() const {
  std::lock_guard lk(mu_);
  return seen_;
}

std::vector<LoopbackNetwork::Captured> LoopbackNetwork::captured() const {
  std::lock_guard lk(mu_);
  return capture_;
}

void LoopbackNetwork::clear_capture() {
  std::lock_guard lk(mu_);
  capture_.clear();
}

std::optional<Bytes> LoopbackNetwork::inject(const std::string& object, Bytes frame) {
  FrameHandler handler;
  {
    std::lock_guard lk(mu_);
    auto it = listeners_.find(object);
    if (it == listeners_.end()) transport_fault("connection refused: " + object);
    handler = it->second;
  }
  return handler(std::move(frame));
}

// TCP

void TcpTransport::send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) {
  auto sa = resolve(to.host, to.port);
  Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (fd.get() < 0) transport_fault(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    transport_fault("connect " + to.to_string() + ": " + std::strerror(errno));
  }
  if (!write_frame(fd.get(), frame)) transport_fault("send failed: " + to.to_string());
  if (!opts.expect_reply) return;
  auto reply = read_frame(fd.get(), static_cast<int>(opts.timeout.count()));
  if (reply && on_reply) on_reply(std::move(*reply));
}

TcpListener::TcpListener(std::string host, std::uint16_t port, FrameHandler handler)
    : handler_(std::move(handler)) {
  fd_ = bind_socket(SOCK_STREAM, host, port, port_);
  if (::listen(fd_, 64) != 0) {
    ::close(fd_);
    transport_fault(std::string("listen: ") + std::strerror(errno));
  }
  thread_ = std::thread([this] { accept_loop(); });
}

TcpListener::~TcpListener() { stop(); }

void TcpListener::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(fd_, SHUT_RDWR);
  if (thread_.joinable()) thread_.join();
  ::close(fd_);
  std::lock_guard lk(workers_mu_);
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

void TcpListener::accept_loop() {
  while (!stopping_) {
    pollfd pfd{fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, 100);
    if (rc <= 0) continue;
    int conn = ::accept(fd_, nullptr, nullptr);
    if (conn < 0) continue;
    std::lock_guard lk(workers_mu_);
    workers_.emplace_back([this, conn] { serve(conn); });
  }
}

void TcpListener::serve(int raw) {
  Fd fd(raw);
  auto frame = read_frame(fd.get(), 10'000);
  if (!frame) return;
  std::optional<Bytes> reply;
  try {
    reply = handler_(std::move(*frame));
  } catch (const std::exception&) {
    return;
  }
  if (reply) write_frame(fd.get(), *reply);
}

// UDP

void UdpTransport::send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) {
  auto sa = resolve(to.host, to.port);
  Fd fd(::socket(AF_INET, SOCK_DGRAM, 0));
  if (fd.get() < 0) transport_fault(std::string("socket: ") + std::strerror(errno));
  for (const auto& f : segment(frame, mtu_, ids_.u64())) {
    auto dgram = encode_fragment(f);
    if (::sendto(fd.get(), dgram.data(), dgram.size(), 0, reinterpret_cast<sockaddr*>(&sa), sizeof sa) < 0) {
      transport_fault("sendto " + to.to_string() + ": " + std::strerror(errno));
    }
  }
  if (!opts.expect_reply) return;
  Reassembler reasm(opts.timeout);
  auto deadline = std::chrono::steady_clock::now() + opts.timeout;
  std::vector<std::uint8_t> buf(65536);
  while (true) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return;
    pollfd pfd{fd.get(), POLLIN, 0};
    if (::poll(&pfd, 1, static_cast<int>(left.count())) <= 0) continue;
    auto n = ::recv(fd.get(), buf.data(), buf.size(), 0);
    if (n <= 0) continue;
    try {
      auto f = decode_fragment(ByteView(buf.data(), static_cast<std::size_t>(n)));
      if (auto done = reasm.add(std::move(f))) {
        if (on_reply) on_reply(std::move(*done));
        return;
      }
    } catch (const FaultError&) {
      // stray datagram
    }
  }
}

UdpListener::UdpListener(std::string host, std::uint16_t port, FrameHandler handler, std::size_t mtu,
                         std::chrono::milliseconds reassembly_timeout)
    : handler_(std::move(handler)), mtu_(mtu), reassembler_(reassembly_timeout) {
  fd_ = bind_socket(SOCK_DGRAM, host, port, port_);
  thread_ = std::thread([this] { loop(); });
}

UdpListener::~UdpListener() { stop(); }

void UdpListener::stop() {
  if (stopping_.exchange(true)) return;
  if (thread_.joinable()) thread_.join();
  ::close(fd_);
}

void UdpListener::loop() {
  std::vector<std::uint8_t> buf(65536);
  while (!stopping_) {
    reassembler_.expire();
    pollfd pfd{fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 100) <= 0) continue;
    sockaddr_in peer{};
    socklen_t plen = sizeof peer;
    auto n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&peer), &plen);
    if (n <= 0) continue;
    std::optional<Bytes> frame;
    try {
      frame = reassembler_.add(decode_fragment(ByteView(buf.data(), static_cast<std::size_t>(n))));
    } catch (const FaultError&) {
      continue;
    }
    if (!frame) continue;
    std::optional<Bytes> reply;
    try {
      reply = handler_(std::move(*frame));
    } catch (const std::exception&) {
      continue;
    }
    if (!reply) continue;
    for (const auto& f : segment(*reply, mtu_, ids_.u64())) {
      auto dgram = encode_fragment(f);
      ::sendto(fd_, dgram.data(), dgram.size(), 0, reinterpret_cast<sockaddr*>(&peer), plen);
    }
  }
}

void Network::send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) {
  switch (to.transport) {
    case TransportKind::kLoopback: return loopback_.send(to, std::move(frame), opts, std::move(on_reply));
    case TransportKind::kTcp: return tcp_.send(to, std::move(frame), opts, std::move(on_reply));
    case TransportKind::kUdp: return udp_.send(to, std::move(frame), opts, std::move(on_reply));
  }
}

}  // namespace chrpc
