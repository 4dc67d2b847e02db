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

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "chrpc/message.hpp"
#include "chrpc/trace.hpp"

namespace chrpc {

// Per-call state shared by associated handlers, keyed by (call, handler).
// Slots untouched for longer than the TTL are evicted.
class CallState {
 public:
  explicit CallState(std::chrono::milliseconds ttl = std::chrono::seconds(60)) : ttl_(ttl) {}

  void put(const CallId& call, const std::string& key, TaggedValue v);
  std::optional<TaggedValue> get(const CallId& call, const std::string& key) const;
  void remove(const CallId& call, const std::string& key);

  void put_original(const CallId& call, Message m);
  std::optional<Message> original(const CallId& call) const;

  void remove_all(const CallId& call);
  std::size_t entry_count(const CallId& call) const;
  std::size_t call_count() const;
  void sweep();

 private:
  using Clock = std::chrono::steady_clock;
  struct Slot {
    std::map<std::string, TaggedValue> entries;
    std::optional<Message> original;
    Clock::time_point touched;
  };
  void sweep_locked(Clock::time_point now);

  std::chrono::milliseconds ttl_;
  mutable std::mutex mu_;
  std::unordered_map<CallId, Slot, CallIdHash> slots_;
};

// Negotiated per-binding parameters (session keys and the like).
class Session {
 public:
  void put(const std::string& key, TaggedValue v);
  std::optional<TaggedValue> get(const std::string& key) const;
  void erase(const std::string& key);
  void clear();

 private:
  mutable std::mutex mu_;
  std::map<std::string, TaggedValue> values_;
};

// Lets a handler place its own calls, either to an ordinary service (the
// relocation manager) or as channel-object control traffic to the peer.
class OutOfBand {
 public:
  virtual ~OutOfBand() = default;
  virtual Reply call(const Address& to, Message m, bool control) = 0;
};

struct CallContext {
  CallId call_id;
  Phase phase = Phase::kRequest;
  Side side = Side::kInitiator;
  CallState& state;
  Session& session;
  Clock& clock;
  RandomSource& rng;
  Trace* trace = nullptr;
  OutOfBand* out_of_band = nullptr;
  Address peer;
  // Marshalled frame as received; set for INDICATION and CONFIRMATION.
  ByteView frame;
  // Per-call scratch carried across the phases one side runs for a call,
  // including stream stages that run before the call id is known.
  std::map<std::string, TaggedValue> exchange;
};

enum class Control : std::uint8_t { kCleared, kUnclearable, kRebind };
const char* control_name(Control c);

struct ControlSignal {
  Control kind = Control::kUnclearable;
  std::string detail;
  // Rebind carries the retargeted message.
  std::optional<Message> message;
};

struct HandlerOutcome {
  std::variant<Message, ControlSignal> value;

  static HandlerOutcome next(Message m) { return {std::move(m)}; }
  static HandlerOutcome cleared(std::string detail = {}) {
    return {ControlSignal{Control::kCleared, std::move(detail), std::nullopt}};
  }
  static HandlerOutcome unclearable(std::string detail = {}) {
    return {ControlSignal{Control::kUnclearable, std::move(detail), std::nullopt}};
  }
  static HandlerOutcome rebind(Message retargeted, std::string detail = {}) {
    return {ControlSignal{Control::kRebind, std::move(detail), std::move(retargeted)}};
  }

  bool has_message() const { return value.index() == 0; }
  const Message& message() const { return std::get<Message>(value); }
  Message& message() { return std::get<Message>(value); }
  const ControlSignal& control() const { return std::get<ControlSignal>(value); }
};

// A call-layer channel object. Defaults: todo copies the message over,
// clear cannot clear, undo restores a remembered input (else identity),
// redo repeats todo.
class Handler {
 public:
  explicit Handler(std::string name) : name_(std::move(name)) {}
  virtual ~Handler() = default;

  const std::string& name() const { return name_; }

  virtual HandlerOutcome todo(const Message& m, CallContext& ctx);
  virtual HandlerOutcome clear(const Message& m, const Fault& f, CallContext& ctx);
  virtual HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx);
  virtual HandlerOutcome redo(const Message& m, CallContext& ctx);

 protected:
  void remember_input(CallContext& ctx, const Message& m) const;
  std::optional<Message> recall_input(const CallContext& ctx) const;
  [[noreturn]] void fail(const CallContext& ctx, std::string detail) const;

 private:
  std::string name_;
};

// A stream-layer channel object: a byte transformation below the
// marshalling boundary.
class StreamHandler {
 public:
  explicit StreamHandler(std::string name) : name_(std::move(name)) {}
  virtual ~StreamHandler() = default;
  const std::string& name() const { return name_; }
  virtual Bytes apply(ByteView data, CallContext& ctx) = 0;

 private:
  std::string name_;
};

enum class Layer : std::uint8_t { kCall, kStream };

struct PeerRef {
  std::string stack;
  std::string handler;
};

using ControlMethod =
    std::function<TaggedValue(const std::vector<TaggedValue>& params, CallContext& ctx)>;

// Deployment record for one channel object: which instance runs in each
// phase, plus its counterpart at the peer and associate in a local channel.
class HandlerSet {
 public:
  HandlerSet(std::string name, Layer layer) : name_(std::move(name)), layer_(layer) {}

  const std::string& name() const { return name_; }
  Layer layer() const { return layer_; }

  HandlerSet& deploy(Phase p, std::shared_ptr<Handler> h);
  HandlerSet& deploy(Phase p, std::shared_ptr<StreamHandler> h);

  // The only sanctioned way to reach a phase's instance; empty when the
  // phase is unpopulated.
  std::shared_ptr<Handler> get_handler(Phase p) const { return call_[index(p)]; }
  std::shared_ptr<StreamHandler> get_stream(Phase p) const { return stream_[index(p)]; }
  bool populated() const;

  std::optional<PeerRef> counterpart;
  std::optional<std::string> associate;
  // Methods the peer's channel objects may invoke as control traffic.
  std::map<std::string, ControlMethod> control_methods;

 private:
  static std::size_t index(Phase p) { return static_cast<std::size_t>(p) - 1; }
  std::string name_;
  Layer layer_;
  std::array<std::shared_ptr<Handler>, 4> call_{};
  std::array<std::shared_ptr<StreamHandler>, 4> stream_{};
};

using Params = std::map<std::string, std::string>;

struct HandlerEnv {
  Clock& clock;
  RandomSource& rng;
  UsageLog* usage_log = nullptr;
};

struct CatalogEntry {
  Layer layer = Layer::kCall;
  // Needs a matching entry in the peer's stack to make sense.
  bool needs_counterpart = true;
  // `name` is the template entry's handler name, which may carry an
  // instance suffix ("Probe.A").
  std::function<HandlerSet(const std::string& name, const Params& params, HandlerEnv& env)> make;
};

// Compiled-in channel objects selectable by name from templates.
class HandlerCatalog {
 public:
  void add(std::string name, CatalogEntry entry);
  // Exact match first, then the part before the first '.'.
  const CatalogEntry* find(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, CatalogEntry> entries_;
};

}  // namespace chrpc
