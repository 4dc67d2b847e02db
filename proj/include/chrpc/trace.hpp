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

#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "chrpc/message.hpp"

namespace chrpc {

enum class Side : std::uint8_t { kInitiator, kAcceptor };
const char* side_name(Side s);

struct TraceEvent {
  std::uint64_t seq = 0;
  std::int64_t time_ms = 0;
  Side side = Side::kInitiator;
  std::optional<Phase> phase;
  std::string handler;
  std::string event;
  CallId call_id;
  std::string detail;

  // seq  time  side  phase  handler  event  call-id  detail
  std::string to_line() const;
};

// Engine event log. One tab-separated line per event; deterministic under a
// seeded clock and single-threaded loopback delivery.
class Trace {
 public:
  explicit Trace(Clock& clock) : clock_(clock) {}

  void emit(Side side, std::optional<Phase> phase, std::string handler, std::string event,
            const CallId& id, std::string detail = {});

  std::vector<TraceEvent> events() const;
  std::string render() const;
  void clear();
  // Also stream each line as it is emitted.
  void tee(std::ostream* out);

 private:
  Clock& clock_;
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
  std::ostream* tee_ = nullptr;
};

// Append-only usage log: ISO-8601 time, phase, method, call-id hex.
class UsageLog {
 public:
  UsageLog() = default;
  explicit UsageLog(std::string path);

  void append(std::int64_t time_ms, Phase phase, const std::string& method, const CallId& id);
  std::vector<std::string> lines() const;
  // Next append fails with a channel fault; used to exercise the retry path.
  void fail_next(int n) { std::lock_guard lk(mu_); fail_next_ = n; }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
  std::string path_;
  int fail_next_ = 0;
};

}  // namespace chrpc
