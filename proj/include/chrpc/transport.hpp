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

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "chrpc/byte_io.hpp"
#include "chrpc/message.hpp"
#include "chrpc/stream.hpp"

namespace chrpc {

// Acceptor entry point: one complete inbound frame in, optional reply out.
using FrameHandler = std::function<std::optional<Bytes>(Bytes frame)>;
using ReplySink = std::function<void(Bytes frame)>;

struct SendOptions {
  bool expect_reply = true;
  std::chrono::milliseconds timeout{10'000};
};

// Delivers one frame and, for two-way calls, hands the reply frame to
// `on_reply`. A lost reply simply never reaches the sink; the caller owns
// the deadline. Connection or send failure throws FaultError(transport).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) = 0;
};

// In-process transport keyed by object name, with fault-injection hooks.
// Delivery is synchronous on the sender's thread.
class LoopbackNetwork final : public Transport {
 public:
  struct Captured {
    std::uint64_t seq = 0;
    std::string object;
    Bytes frame;
    bool reply = false;
  };

  void listen(const std::string& object, FrameHandler handler);
  void unlisten(const std::string& object);
  bool listening(const std::string& object) const;

  void send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) override;

  // Frame numbers count every frame crossing the network, requests and
  // replies alike, starting at 1.
  void drop_nth(std::uint64_t n);
  void corrupt_byte(std::uint64_t n, std::size_t k);
  void delay(std::chrono::milliseconds d);
  void fail_connects(int n);
  void clear_faults();

  std::uint64_t frames_seen() const;
  std::vector<Captured> captured() const;
  void clear_capture();
  // Re-injects a frame straight at a listener, bypassing fault hooks.
  std::optional<Bytes> inject(const std::string& object, Bytes frame);

 private:
  // Returns false if the frame is dropped.
  bool observe(const std::string& object, Bytes& frame, bool reply);

  mutable std::mutex mu_;
  std::map<std::string, FrameHandler> listeners_;
  std::uint64_t seen_ = 0;
  std::set<std::uint64_t> drop_;
  std::map<std::uint64_t, std::size_t> corrupt_;
  std::chrono::milliseconds delay_{0};
  int fail_connects_ = 0;
  std::vector<Captured> capture_;
};

// One connection per call; u32 big-endian length prefix per frame.
class TcpTransport final : public Transport {
 public:
  void send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) override;
};

class TcpListener {
 public:
  TcpListener(std::string host, std::uint16_t port, FrameHandler handler);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  int fd_ = -1;
  std::uint16_t port_ = 0;
  FrameHandler handler_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

// Datagrams, segmented when a frame exceeds the MTU.
class UdpTransport final : public Transport {
 public:
  explicit UdpTransport(std::size_t mtu = 1200) : mtu_(mtu) {}
  void send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) override;

 private:
  std::size_t mtu_;
  RandomSource ids_;
};

class UdpListener {
 public:
  UdpListener(std::string host, std::uint16_t port, FrameHandler handler, std::size_t mtu = 1200,
              std::chrono::milliseconds reassembly_timeout = std::chrono::seconds(2));
  ~UdpListener();
  UdpListener(const UdpListener&) = delete;
  UdpListener& operator=(const UdpListener&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void loop();

  int fd_ = -1;
  std::uint16_t port_ = 0;
  FrameHandler handler_;
  std::size_t mtu_;
  Reassembler reassembler_;
  RandomSource ids_;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

// Routes by the address's transport kind.
class Network final : public Transport {
 public:
  explicit Network(std::size_t udp_mtu = 1200) : udp_(udp_mtu) {}
  LoopbackNetwork& loopback() { return loopback_; }
  void send(const Address& to, Bytes frame, const SendOptions& opts, ReplySink on_reply) override;

 private:
  LoopbackNetwork loopback_;
  TcpTransport tcp_;
  UdpTransport udp_;
};

}  // namespace chrpc
