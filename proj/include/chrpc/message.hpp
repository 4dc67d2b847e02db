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
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chrpc/byte_io.hpp"
#include "chrpc/fault.hpp"

namespace chrpc {

enum class TransportKind : std::uint8_t { kLoopback = 0, kTcp = 1, kUdp = 2 };

// Where a call goes or comes back to. Text form: kind://host:port/object,
// e.g. tcp://127.0.0.1:7000/AnswererServer or loopback:///AnswererServer.
struct Address {
  TransportKind transport = TransportKind::kLoopback;
  std::string host;
  std::uint16_t port = 0;
  std::string object;

  static Address loopback(std::string object);
  static Address parse(std::string_view text);  // throws std::invalid_argument
  std::string to_string() const;

  friend bool operator==(const Address&, const Address&) = default;
};

struct CallId {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  bool is_zero() const { return hi == 0 && lo == 0; }
  std::string to_hex() const;

  friend bool operator==(const CallId&, const CallId&) = default;
  friend auto operator<=>(const CallId&, const CallId&) = default;
};

struct CallIdHash {
  std::size_t operator()(const CallId& id) const noexcept {
    return static_cast<std::size_t>(id.hi * 0x9E3779B97F4A7C15ull ^ id.lo);
  }
};

struct Message;

enum class ValueTag : std::uint8_t {
  kUnit = 0,
  kBool = 1,
  kInt64 = 2,
  kFloat64 = 3,
  kText = 4,
  kBytes = 5,
  kList = 6,
  kMessage = 7,
};

struct Unit {
  friend bool operator==(Unit, Unit) { return true; }
};

// A call parameter or result. The message alternative is what makes
// wrapping possible: a wrapper carries the inner call as its last param.
class TaggedValue {
 public:
  using List = std::vector<TaggedValue>;

  TaggedValue() = default;
  TaggedValue(Unit) {}
  TaggedValue(bool v) : v_(v) {}
  TaggedValue(std::int64_t v) : v_(v) {}
  TaggedValue(int v) : v_(static_cast<std::int64_t>(v)) {}
  TaggedValue(double v) : v_(v) {}
  TaggedValue(std::string v) : v_(std::move(v)) {}
  TaggedValue(const char* v) : v_(std::string(v)) {}
  TaggedValue(Bytes v) : v_(std::move(v)) {}
  TaggedValue(List v) : v_(std::move(v)) {}
  TaggedValue(Message m);

  ValueTag tag() const { return static_cast<ValueTag>(v_.index()); }

  bool as_bool() const;
  std::int64_t as_int() const;
  double as_float() const;
  const std::string& as_text() const;
  const Bytes& as_bytes() const;
  const List& as_list() const;
  const Message& as_message() const;

  std::string to_string() const;

  // Float payloads compare by bit pattern so NaNs round-trip as equal.
  friend bool operator==(const TaggedValue& a, const TaggedValue& b);

 private:
  std::variant<Unit, bool, std::int64_t, double, std::string, Bytes, List,
               std::shared_ptr<const Message>>
      v_;
};

struct Message {
  Address target;
  Address return_address;
  std::string method;
  std::vector<TaggedValue> params;
  CallId call_id;
  bool one_cast = false;
  Phase phase = Phase::kRequest;

  bool is_wrapper() const {
    return !params.empty() && params.back().tag() == ValueTag::kMessage;
  }

  friend bool operator==(const Message&, const Message&) = default;
};

// Reply to a two-way call. `enveloped` marks a result that is a
// response-channel wrapper rather than the bare application result.
struct Reply {
  CallId call_id;
  std::variant<TaggedValue, Fault> outcome;
  bool enveloped = false;

  bool ok() const { return outcome.index() == 0; }
  const TaggedValue& result() const { return std::get<TaggedValue>(outcome); }
  const Fault& fault() const { return std::get<Fault>(outcome); }

  friend bool operator==(const Reply&, const Reply&) = default;
};

Message wrap(std::string outer_method, Message inner, std::vector<TaggedValue> extra = {});

struct Unwrapped {
  Message inner;
  std::vector<TaggedValue> extra;
};

// Throws FaultError(kind=channel, detail "NotAWrapper: ...") when the last
// param is not a message.
Unwrapped unwrap(const Message& m, Phase at = Phase::kIndication, std::string_view handler = {});

// Rewrites every target in the nesting chain that equals `from`.
Message retarget(Message m, const Address& from, const Address& to);

struct Signature {
  bool returns_result = true;
  std::vector<std::string> faults;
};

// Method signatures known to the caller; drives one-cast inference.
class InterfaceRegistry {
 public:
  void add(std::string method, Signature sig);
  const Signature* find(std::string_view method) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Signature, std::less<>> sigs_;
};

// True iff `m.one_cast` is set or the registered signature returns nothing
// and declares no faults. Throws FaultError(application, "UnknownMethod").
bool is_one_cast(const Message& m, const InterfaceRegistry& interfaces);

// Process-wide unique call identifiers. Seeded instances produce a
// reproducible sequence.
class CallIdGenerator {
 public:
  CallIdGenerator();
  explicit CallIdGenerator(std::uint64_t seed);
  CallId next();

 private:
  std::uint64_t prefix_;
  std::atomic<std::uint64_t> counter_{0};
};

CallId new_call_id();

// Millisecond wall clock. The seeded variant starts at a seed-derived epoch
// and advances one millisecond per reading.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() override;
};

class SeededClock final : public Clock {
 public:
  explicit SeededClock(std::uint64_t seed);
  std::int64_t now_ms() override;
  void advance(std::int64_t ms) { now_ += ms; }
  static std::int64_t epoch_for(std::uint64_t seed);

 private:
  std::atomic<std::int64_t> now_;
};

// Random bytes for nonces; seeded for deterministic runs.
class RandomSource {
 public:
  RandomSource();
  explicit RandomSource(std::uint64_t seed);
  Bytes bytes(std::size_t n);
  std::uint64_t u64();

 private:
  std::mutex mu_;
  std::mt19937_64 rng_;
};

// Reads CHANNELRPC_SEED. Absent or unparsable means non-deterministic.
std::optional<std::uint64_t> seed_from_env();

std::string iso8601_ms(std::int64_t epoch_ms);

}  // namespace chrpc
