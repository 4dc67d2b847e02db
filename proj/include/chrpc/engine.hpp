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
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chrpc/binding.hpp"
#include "chrpc/handler.hpp"
#include "chrpc/marshal.hpp"
#include "chrpc/message.hpp"
#include "chrpc/stream.hpp"
#include "chrpc/trace.hpp"
#include "chrpc/transport.hpp"

namespace chrpc {

enum class RecoveryScheme : std::uint8_t {
  kClearThenUndoRedo,     // every handler tries clear; then undo upward; then redo
  kClearAndUndoThenRedo,  // each undo doubles as a clear attempt; then redo
};

const char* scheme_name(RecoveryScheme s);

struct EngineConfig {
  RecoveryScheme scheme = RecoveryScheme::kClearThenUndoRedo;
  std::chrono::milliseconds confirm_timeout{10'000};
  int resend_budget = 1;

  // Keys: scheme=clear_then_undo_redo|clear_and_undo_then_redo,
  // timeout_ms=<n>, resend=<n>. Unknown keys are rejected.
  static EngineConfig from_params(const Params& p, EngineConfig base);
  static EngineConfig from_params(const Params& p) { return from_params(p, EngineConfig{}); }
};

// Name of the method a reply travels under through the response and
// confirmation channels.
inline constexpr const char* kReturnMethod = "$return";

struct ChannelStep {
  std::string name;
  std::shared_ptr<Handler> handler;
};

// One phase's ordered stack. Call steps run above the marshalling boundary,
// stream steps below it.
struct Channel {
  Phase phase = Phase::kRequest;
  std::uint64_t binding_id = 0;
  std::vector<ChannelStep> calls;
  StreamStack streams;
};

// Builds the four channels for one side from a template. REQUEST and
// RESPONSE follow template order; INDICATION and CONFIRMATION run it in
// reverse so unwrapping mirrors wrapping.
struct ChannelSet {
  std::vector<HandlerSet> sets;
  std::array<Channel, 4> channels;

  Channel& at(Phase p) { return channels[static_cast<std::size_t>(p) - 1]; }
  const HandlerSet* owner_of(const std::string& handler, Phase p) const;
};

ChannelSet build_channels(const ChannelTemplate& tpl, const HandlerCatalog& catalog, HandlerEnv& env,
                          std::uint64_t binding_id);

// The contract one initiator holds with one acceptor (or, acceptor-side,
// with all initiators of a served object).
class Binding {
 public:
  std::uint64_t id = 0;
  Address peer;
  ChannelTemplate tpl;
  EngineConfig config;
  Session session;
  // Per-call scratch for this side of the binding only.
  CallState state;
  bool current = true;
  std::int64_t epoch = 1;
  ChannelSet stacks;

  Channel& channel(Phase p) { return stacks.at(p); }
};

using ServiceFn = std::function<TaggedValue(const std::vector<TaggedValue>& params)>;

// Name-keyed dispatch table: the skeleton without a stub compiler.
class ServiceTable {
 public:
  void add(std::string method, Signature sig, ServiceFn fn);
  const ServiceFn* find(const std::string& method) const;
  void export_interfaces(InterfaceRegistry& into) const;

 private:
  struct Entry {
    Signature sig;
    ServiceFn fn;
  };
  std::map<std::string, Entry> entries_;
};

// Process-level context shared by engines: clock, randomness, identifiers,
// trace, network and the handler catalog. Seeded for reproducible runs.
class Environment {
 public:
  explicit Environment(std::optional<std::uint64_t> seed = seed_from_env());

  bool deterministic() const { return seed_.has_value(); }
  std::optional<std::uint64_t> seed() const { return seed_; }

  Clock& clock() { return *clock_; }
  RandomSource& rng() { return *rng_; }
  CallIdGenerator& ids() { return *ids_; }
  Trace& trace() { return trace_; }
  Network& network() { return network_; }
  HandlerCatalog& catalog() { return catalog_; }
  InterfaceRegistry& interfaces() { return interfaces_; }
  UsageLog& usage_log() { return usage_log_; }
  HandlerEnv handler_env() { return HandlerEnv{*clock_, *rng_, &usage_log_}; }

 private:
  std::optional<std::uint64_t> seed_;
  std::unique_ptr<Clock> clock_;
  std::unique_ptr<RandomSource> rng_;
  std::unique_ptr<CallIdGenerator> ids_;
  Trace trace_;
  Network network_;
  HandlerCatalog catalog_;
  InterfaceRegistry interfaces_;
  UsageLog usage_log_;
};

struct RecoveryOutcome {
  enum class Kind { kRepaired, kRebind, kFailed };
  Kind kind = Kind::kFailed;
  Message message;
  Fault fault;
};

class Engine final : public OutOfBand {
 public:
  explicit Engine(Environment& env, EngineConfig defaults = {});

  // Settings in tpl.config override `defaults`.
  std::shared_ptr<Binding> bind(Address peer, ChannelTemplate tpl);
  // Destroys and reconstructs the binding's channels against a new peer.
  void rebind(Binding& b, const Address& peer);

  // Runs a call through REQUEST, the wire, and (for two-way calls)
  // CONFIRMATION. Faults come back inside the Reply.
  Reply initiate(Message m, Binding& b);

  // Acceptor side for one inbound frame; returns the response frame, or
  // nothing for one-casts.
  std::optional<Bytes> accept(Bytes wire, Binding& b, const ServiceTable& services);

  // Intra-channel recovery for a fault at `failed_index` (a call step index;
  // calls.size() denotes the marshal/stream/wire stage). `entries[i]` is the
  // message step i received, for i <= failed_index.
  RecoveryOutcome recover(Channel& ch, std::size_t failed_index, const std::vector<Message>& entries,
                          const Fault& f, RecoveryScheme scheme, CallContext& ctx);

  Reply dispatch(const Message& m, const ServiceTable& services, CallContext& ctx);

  // OutOfBand: control traffic goes straight to the peer's channel objects;
  // ordinary calls use a fresh identity-stack binding.
  Reply call(const Address& to, Message m, bool control) override;

  Environment& env() { return env_; }
  const EngineConfig& defaults() const { return defaults_; }

 private:
  struct StackRun;
  CallContext context(Binding& b, const CallId& id, Phase p, Side side);
  void emit(const CallContext& ctx, const std::string& handler, const std::string& event,
            const std::string& detail = {});

  StackRun run_stack(Channel& ch, Message m, CallContext& ctx, bool redo_all, RecoveryScheme scheme);
  // REQUEST stack, marshal, stream send and the wire; returns the raw reply
  // (absent for one-casts) or the unrecovered fault.
  std::variant<std::optional<Bytes>, Fault> transmit(Binding& b, CallContext& ctx, int& budget, bool redo);
  std::variant<Reply, Fault> confirm(Binding& b, const Bytes& wire, CallContext& ctx);
  std::optional<Bytes> exchange(Binding& b, Bytes frame, bool one_cast);
  void relocate(Binding& b, CallContext& ctx, const Address& to);
  bool may_resend(Binding& b, const Fault& f) const;
  Bytes seal_reply(Binding& b, CallContext& ctx, const Reply& r);
  std::optional<Bytes> accept_control(const Bytes& wire, Binding& b);

  Environment& env_;
  EngineConfig defaults_;
  std::atomic<std::uint64_t> next_binding_{1};
};

// Serves one object: an acceptor-side binding plus the dispatch table.
class Acceptor {
 public:
  Acceptor(Engine& engine, ChannelTemplate tpl, ServiceTable services);

  std::optional<Bytes> handle(Bytes frame);
  FrameHandler frame_handler();
  Binding& binding() { return *binding_; }
  const ChannelTemplate& tpl() const { return binding_->tpl; }

 private:
  Engine& engine_;
  std::shared_ptr<Binding> binding_;
  ServiceTable services_;
};

}  // namespace chrpc
