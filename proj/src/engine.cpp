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

#include "chrpc/engine.hpp"

#include <algorithm>
#include <stdexcept>

#include "chrpc/services.hpp"

namespace chrpc {

namespace {

// Bounds per-pass recovery so a handler that keeps failing cannot loop.
constexpr int kMaxRecoveries = 8;
constexpr int kMaxRebinds = 2;

Fault as_fault(const std::exception& e, Phase p, const std::string& handler) {
  if (auto* fe = dynamic_cast<const FaultError*>(&e)) return fe->fault();
  return make_fault(FaultKind::kChannel, p, handler, e.what());
}

Message return_message(const Message& request, TaggedValue result) {
  Message r;
  r.target = request.return_address;
  r.return_address = request.target;
  r.method = kReturnMethod;
  r.params = {std::move(result)};
  r.call_id = request.call_id;
  r.phase = Phase::kResponse;
  return r;
}

}  // namespace

const char* scheme_name(RecoveryScheme s) {
  return s == RecoveryScheme::kClearThenUndoRedo ? "clear_then_undo_redo" : "clear_and_undo_then_redo";
}

EngineConfig EngineConfig::from_params(const Params& p, EngineConfig base) {
  for (const auto& [k, v] : p) {
    if (k == "scheme") {
      if (v == "clear_then_undo_redo") {
        base.scheme = RecoveryScheme::kClearThenUndoRedo;
      } else if (v == "clear_and_undo_then_redo") {
        base.scheme = RecoveryScheme::kClearAndUndoThenRedo;
      } else {
        throw std::invalid_argument("unknown recovery scheme: " + v);
      }
    } else if (k == "timeout_ms") {
      base.confirm_timeout = std::chrono::milliseconds(std::stoll(v));
    } else if (k == "resend") {
      base.resend_budget = std::stoi(v);
      if (base.resend_budget < 0) throw std::invalid_argument("resend must be >= 0");
    } else {
      throw std::invalid_argument("unknown config key: " + k);
    }
  }
  return base;
}

const HandlerSet* ChannelSet::owner_of(const std::string& handler, Phase p) const {
  for (const auto& s : sets) {
    if (auto h = s.get_handler(p); h && h->name() == handler) return &s;
    if (auto h = s.get_stream(p); h && h->name() == handler) return &s;
  }
  return nullptr;
}

ChannelSet build_channels(const ChannelTemplate& tpl, const HandlerCatalog& catalog, HandlerEnv& env,
                          std::uint64_t binding_id) {
  ChannelSet cs;
  for (std::size_t i = 0; i < 4; ++i) {
    cs.channels[i].phase = static_cast<Phase>(i + 1);
    cs.channels[i].binding_id = binding_id;
  }
  for (const auto& e : tpl.entries) {
    const CatalogEntry* ce = catalog.find(e.handler);
    if (!ce) throw std::invalid_argument("no channel object named " + e.handler);
    if (ce->layer != e.layer) throw std::invalid_argument(e.handler + " is declared in the wrong layer");
    cs.sets.push_back(ce->make(e.handler, e.params, env));
  }
  for (const auto& set : cs.sets) {
    for (auto p : {Phase::kRequest, Phase::kIndication, Phase::kResponse, Phase::kConfirmation}) {
      auto& ch = cs.at(p);
      bool sending = p == Phase::kRequest || p == Phase::kResponse;
      if (auto h = set.get_handler(p)) ch.calls.push_back({h->name(), h});
      if (auto s = set.get_stream(p)) (sending ? ch.streams.send_chain : ch.streams.receive_chain).push_back(s);
    }
  }
  std::reverse(cs.at(Phase::kIndication).calls.begin(), cs.at(Phase::kIndication).calls.end());
  std::reverse(cs.at(Phase::kConfirmation).calls.begin(), cs.at(Phase::kConfirmation).calls.end());
  return cs;
}

void ServiceTable::add(std::string method, Signature sig, ServiceFn fn) {
  entries_[std::move(method)] = Entry{std::move(sig), std::move(fn)};
}

const ServiceFn* ServiceTable::find(const std::string& method) const {
  auto it = entries_.find(method);
  return it == entries_.end() ? nullptr : &it->second.fn;
}

void ServiceTable::export_interfaces(InterfaceRegistry& into) const {
  for (const auto& [name, e] : entries_) into.add(name, e.sig);
}

Environment::Environment(std::optional<std::uint64_t> seed)
    : seed_(seed),
      clock_(seed ? std::unique_ptr<Clock>(new SeededClock(*seed)) : std::unique_ptr<Clock>(new SystemClock)),
      rng_(seed ? std::make_unique<RandomSource>(*seed ^ 0x5eed5eed5eed5eedull) : std::make_unique<RandomSource>()),
      ids_(seed ? std::make_unique<CallIdGenerator>(*seed) : std::make_unique<CallIdGenerator>()),
      trace_(*clock_),
      catalog_(bundled_catalog()) {}

// Engine

struct Engine::StackRun {
  RecoveryOutcome::Kind kind = RecoveryOutcome::Kind::kRepaired;  // kRepaired: ran to the end
  Message out;
  Fault fault;
  std::vector<Message> entries;  // entries[i] = input of step i; back() = output
};

Engine::Engine(Environment& env, EngineConfig defaults) : env_(env), defaults_(defaults) {}

std::shared_ptr<Binding> Engine::bind(Address peer, ChannelTemplate tpl) {
  auto b = std::make_shared<Binding>();
  b->id = next_binding_++;
  b->peer = std::move(peer);
  b->config = EngineConfig::from_params(tpl.config, defaults_);
  auto henv = env_.handler_env();
  b->stacks = build_channels(tpl, env_.catalog(), henv, b->id);
  b->tpl = std::move(tpl);
  return b;
}

void Engine::rebind(Binding& b, const Address& peer) {
  auto henv = env_.handler_env();
  b.stacks = build_channels(b.tpl, env_.catalog(), henv, b.id);
  b.peer = peer;
  // Negotiated state belonged to the old peer.
  b.session.clear();
  ++b.epoch;
  b.current = true;
}

CallContext Engine::context(Binding& b, const CallId& id, Phase p, Side side) {
  return CallContext{id, p, side, b.state, b.session, env_.clock(), env_.rng(), &env_.trace(), this,
                     b.peer, {}, {}};
}

void Engine::emit(const CallContext& ctx, const std::string& handler, const std::string& event,
                  const std::string& detail) {
  env_.trace().emit(ctx.side, ctx.phase, handler, event, ctx.call_id, detail);
}

RecoveryOutcome Engine::recover(Channel& ch, std::size_t failed_index, const std::vector<Message>& entries,
                                const Fault& f, RecoveryScheme scheme, CallContext& ctx) {
  RecoveryOutcome out;
  out.fault = f;
  auto& steps = ch.calls;
  if (failed_index == 0 || failed_index > steps.size() || entries.size() < failed_index + 1) return out;

  auto rebind_with = [&](const ControlSignal& c) {
    out.kind = RecoveryOutcome::Kind::kRebind;
    out.message = c.message.value_or(entries[0]);
    return out;
  };
  auto aborted = [&](const std::exception& e, const std::string& who) {
    out.kind = RecoveryOutcome::Kind::kFailed;
    out.fault = contain(as_fault(e, ctx.phase, who), f);
    emit(ctx, who, "fault", out.fault.to_string());
    return out;
  };

  // Runs undo on steps [from .. 0] starting from `m`, the output of step `from`.
  // Under scheme 2 each undo may also clear.
  auto undo_up = [&](std::size_t from, Message m, bool with_clear, std::optional<std::size_t>& cleared_at)
      -> std::optional<Message> {
    for (std::size_t j = from + 1; j-- > 0;) {
      auto& st = steps[j];
      HandlerOutcome o = st.handler->undo(m, f, ctx);
      if (with_clear) {
        bool cleared = !o.has_message() && o.control().kind == Control::kCleared;
        emit(ctx, st.name, "undo+clear", cleared ? "cleared" : "not cleared");
        if (cleared) {
          if (!cleared_at) cleared_at = j;
          m = entries[j];
          continue;
        }
      } else {
        emit(ctx, st.name, "undo");
      }
      if (!o.has_message()) {
        if (o.control().kind == Control::kRebind) {
          out.message = *o.control().message;
          return std::nullopt;
        }
        m = entries[j];  // cleared/unclearable from a plain undo: fall back to the recorded input
        continue;
      }
      m = o.message();
    }
    return m;
  };

  auto redo_down = [&](Message m) {
    for (std::size_t j = 0; j < failed_index; ++j) {
      auto& st = steps[j];
      emit(ctx, st.name, "redo");
      HandlerOutcome o = st.handler->redo(m, ctx);
      if (!o.has_message()) raise(FaultKind::kChannel, ctx.phase, st.name, "redo returned a control signal");
      m = o.message();
    }
    return m;
  };

  std::string current = steps[failed_index - 1].name;
  try {
    if (scheme == RecoveryScheme::kClearThenUndoRedo) {
      std::optional<std::size_t> k;
      Message repaired;
      for (std::size_t j = failed_index; j-- > 0;) {
        current = steps[j].name;
        HandlerOutcome o = steps[j].handler->clear(entries[j], f, ctx);
        if (o.has_message()) {
          emit(ctx, current, "clear", "cleared");
          k = j;
          repaired = o.message();
          break;
        }
        const auto& c = o.control();
        emit(ctx, current, "clear", control_name(c.kind));
        if (c.kind == Control::kRebind) return rebind_with(c);
        if (c.kind == Control::kCleared) {
          k = j;
          repaired = entries[j];
          break;
        }
      }
      std::optional<std::size_t> unused;
      if (!k) {
        auto top = undo_up(failed_index - 1, entries[failed_index], false, unused);
        if (!top) {
          out.kind = RecoveryOutcome::Kind::kRebind;
          return out;
        }
        return out;  // kFailed with the original fault
      }
      Message top = repaired;
      if (*k > 0) {
        auto t = undo_up(*k - 1, repaired, false, unused);
        if (!t) {
          out.kind = RecoveryOutcome::Kind::kRebind;
          return out;
        }
        top = *t;
      }
      out.message = redo_down(top);
      out.kind = RecoveryOutcome::Kind::kRepaired;
      return out;
    }

    std::optional<std::size_t> cleared_at;
    auto top = undo_up(failed_index - 1, entries[failed_index], true, cleared_at);
    if (!top) {
      out.kind = RecoveryOutcome::Kind::kRebind;
      return out;
    }
    if (!cleared_at) return out;
    out.message = redo_down(*top);
    out.kind = RecoveryOutcome::Kind::kRepaired;
    return out;
  } catch (const std::exception& e) {
    return aborted(e, current);
  }
}

Engine::StackRun Engine::run_stack(Channel& ch, Message m, CallContext& ctx, bool redo_all,
                                   RecoveryScheme scheme) {
  StackRun run;
  auto& steps = ch.calls;
  std::optional<std::size_t> redo_at;
  int recoveries = 0;
  std::size_t i = 0;
  while (i < steps.size()) {
    run.entries.resize(i);
    run.entries.push_back(m);
    auto& st = steps[i];
    bool redo = redo_all || redo_at == i;
    try {
      emit(ctx, st.name, redo ? "redo" : "todo");
      HandlerOutcome o = redo ? st.handler->redo(m, ctx) : st.handler->todo(m, ctx);
      if (!o.has_message()) {
        const auto& c = o.control();
        if (c.kind == Control::kRebind && c.message) {
          run.kind = RecoveryOutcome::Kind::kRebind;
          run.out = *c.message;
          return run;
        }
        raise(FaultKind::kChannel, ctx.phase, st.name, std::string("unexpected ") + control_name(c.kind));
      }
      m = o.message();
      ++i;
    } catch (const std::exception& e) {
      Fault f = as_fault(e, ctx.phase, st.name);
      emit(ctx, st.name, "fault", f.to_string());
      if (++recoveries > kMaxRecoveries) {
        run.kind = RecoveryOutcome::Kind::kFailed;
        run.fault = f;
        return run;
      }
      auto rec = recover(ch, i, run.entries, f, scheme, ctx);
      if (rec.kind != RecoveryOutcome::Kind::kRepaired) {
        run.kind = rec.kind;
        run.fault = rec.fault;
        run.out = rec.message;
        return run;
      }
      m = rec.message;
      redo_at = i;
    }
  }
  run.entries.resize(i);
  run.entries.push_back(m);
  run.out = m;
  return run;
}

std::optional<Bytes> Engine::exchange(Binding& b, Bytes frame, bool one_cast) {
  // Transports hand over the reply (or give up at the deadline) before send
  // returns, so the completion slot is settled by the time we look at it.
  std::optional<Bytes> reply;
  SendOptions opts{!one_cast, b.config.confirm_timeout};
  env_.network().send(b.peer, std::move(frame), opts, [&reply](Bytes r) { reply = std::move(r); });
  if (!one_cast && !reply) {
    raise(FaultKind::kTransport, Phase::kRequest, "",
          "timeout: no reply within " + std::to_string(b.config.confirm_timeout.count()) + " ms");
  }
  return reply;
}

void Engine::relocate(Binding& b, CallContext& ctx, const Address& to) {
  Address from = b.peer;
  rebind(b, to);
  ctx.peer = b.peer;
  ctx.exchange.clear();
  if (auto orig = b.state.original(ctx.call_id)) b.state.put_original(ctx.call_id, retarget(*orig, from, to));
  emit(ctx, "", "rebind", from.to_string() + " -> " + to.to_string() + " epoch " + std::to_string(b.epoch));
}

std::variant<std::optional<Bytes>, Fault> Engine::transmit(Binding& b, CallContext& ctx, int& budget,
                                                           bool redo) {
  int rebinds = 0;
  for (;;) {
    ctx.phase = Phase::kRequest;
    Message start = *b.state.original(ctx.call_id);
    emit(ctx, "", "enter", start.method);
    auto& ch = b.channel(Phase::kRequest);
    auto run = run_stack(ch, start, ctx, redo, b.config.scheme);
    if (run.kind == RecoveryOutcome::Kind::kRebind) {
      if (++rebinds > kMaxRebinds) return make_fault(FaultKind::kChannel, Phase::kRequest, "", "too many rebinds");
      relocate(b, ctx, run.out.target);
      redo = false;
      continue;
    }
    if (run.kind == RecoveryOutcome::Kind::kFailed) return run.fault;

    Message ready = run.out;
    bool restart = false;
    int recoveries = 0;
    while (!restart) {
      try {
        Bytes frame = marshal_message(ready);
        Bytes wire = chain_send(ch.streams, frame, ctx);
        emit(ctx, "", "send", std::to_string(wire.size()) + " bytes to " + b.peer.to_string());
        return exchange(b, std::move(wire), ready.one_cast);
      } catch (const std::exception& e) {
        Fault f = as_fault(e, Phase::kRequest, "");
        emit(ctx, f.handler, "fault", f.to_string());
        RecoveryOutcome rec;
        rec.fault = f;
        if (++recoveries <= kMaxRecoveries) {
          rec = recover(ch, ch.calls.size(), run.entries, f, b.config.scheme, ctx);
        }
        switch (rec.kind) {
          case RecoveryOutcome::Kind::kRepaired:
            ready = rec.message;
            emit(ctx, "", "resend", "after recovery");
            break;
          case RecoveryOutcome::Kind::kRebind:
            if (++rebinds > kMaxRebinds) return f;
            relocate(b, ctx, rec.message.target);
            redo = false;
            restart = true;
            break;
          case RecoveryOutcome::Kind::kFailed:
            if (rec.fault == f && f.kind == FaultKind::kTransport && budget > 0) {
              --budget;
              emit(ctx, "", "resend", "transport: " + f.detail);
              redo = true;
              restart = true;
              break;
            }
            return rec.fault;
        }
      }
    }
  }
}

std::variant<Reply, Fault> Engine::confirm(Binding& b, const Bytes& wire, CallContext& ctx) {
  ctx.phase = Phase::kConfirmation;
  ctx.frame = ByteView(wire.data(), wire.size());
  emit(ctx, "", "receive", std::to_string(wire.size()) + " bytes");
  emit(ctx, "", "enter");
  auto& ch = b.channel(Phase::kConfirmation);

  Bytes plain;
  try {
    plain = chain_receive(ch.streams, ctx.frame, ctx);
  } catch (const std::exception& e) {
    Fault f = as_fault(e, Phase::kConfirmation, "");
    // A peer that could not encrypt sends its fault reply in the clear.
    if (!ch.streams.receive_chain.empty() && looks_like_frame(ctx.frame)) {
      try {
        Reply r = unmarshal_reply(ctx.frame);
        if (!r.ok()) {
          emit(ctx, r.fault().handler, "fault-reply", r.fault().to_string());
          return r;
        }
      } catch (const std::exception&) {
      }
    }
    emit(ctx, f.handler, "fault", f.to_string());
    return f;
  }

  Reply r;
  try {
    r = unmarshal_reply(plain);
    if (!r.call_id.is_zero() && r.call_id != ctx.call_id) {
      raise(FaultKind::kChannel, Phase::kConfirmation, "marshal", "reply for another call " + r.call_id.to_hex());
    }
  } catch (const std::exception& e) {
    Fault f = as_fault(e, Phase::kConfirmation, "marshal");
    emit(ctx, f.handler, "fault", f.to_string());
    return f;
  }
  if (!r.ok()) {
    emit(ctx, r.fault().handler, "fault-reply", r.fault().to_string());
    r.call_id = ctx.call_id;
    return r;
  }

  Message lifted;
  if (r.enveloped) {
    lifted = r.result().as_message();
  } else {
    lifted.method = kReturnMethod;
    lifted.params = {r.result()};
    lifted.call_id = ctx.call_id;
    lifted.phase = Phase::kResponse;
  }
  auto run = run_stack(ch, std::move(lifted), ctx, false, b.config.scheme);
  if (run.kind == RecoveryOutcome::Kind::kRebind) {
    return make_fault(FaultKind::kChannel, Phase::kConfirmation, "", "rebind requested during confirmation");
  }
  if (run.kind == RecoveryOutcome::Kind::kFailed) return run.fault;
  if (run.out.method != kReturnMethod || run.out.params.size() != 1) {
    Fault f = make_fault(FaultKind::kChannel, Phase::kConfirmation, "", "reply still wrapped in " + run.out.method);
    emit(ctx, "", "fault", f.to_string());
    return f;
  }
  Reply out;
  out.call_id = ctx.call_id;
  out.outcome = run.out.params[0];
  return out;
}

bool Engine::may_resend(Binding& b, const Fault& f) const {
  if (f.kind == FaultKind::kTransport) return true;
  if (f.origin != Phase::kConfirmation) return false;
  if (f.handler == "marshal") return true;
  // The faulting checker's associate on the request side can rebuild the
  // call from the retained original.
  const HandlerSet* owner = b.stacks.owner_of(f.handler, Phase::kConfirmation);
  return owner && (owner->get_handler(Phase::kRequest) || owner->get_stream(Phase::kRequest));
}

Reply Engine::initiate(Message m, Binding& b) {
  if (m.call_id.is_zero()) m.call_id = env_.ids().next();
  m.phase = Phase::kRequest;
  if (m.target == Address{}) m.target = b.peer;
  // Addresses must name an object on the wire.
  if (m.return_address.object.empty()) m.return_address = Address::loopback("initiator");
  if (!m.one_cast && env_.interfaces().find(m.method)) m.one_cast = is_one_cast(m, env_.interfaces());
  b.state.put_original(m.call_id, m);

  auto ctx = context(b, m.call_id, Phase::kRequest, Side::kInitiator);
  emit(ctx, "", "call", m.method + (m.one_cast ? " one-cast" : ""));

  Reply out;
  out.call_id = m.call_id;
  int budget = b.config.resend_budget;
  bool redo = false;
  for (;;) {
    auto sent = transmit(b, ctx, budget, redo);
    if (auto* f = std::get_if<Fault>(&sent)) {
      out.outcome = *f;
      break;
    }
    if (m.one_cast) {
      out.outcome = TaggedValue();
      break;
    }
    Bytes wire = std::move(*std::get<std::optional<Bytes>>(sent));
    auto conf = confirm(b, wire, ctx);
    if (auto* r = std::get_if<Reply>(&conf)) {
      out = *r;
      break;
    }
    const Fault& f = std::get<Fault>(conf);
    if (budget > 0 && may_resend(b, f)) {
      --budget;
      emit(ctx, f.handler, "resend", f.detail);
      ctx.exchange.clear();
      redo = true;
      continue;
    }
    out.outcome = f;
    break;
  }
  emit(ctx, "", "reply", out.ok() ? "ok" : "fault");
  b.state.remove_all(m.call_id);
  return out;
}

Reply Engine::dispatch(const Message& m, const ServiceTable& services, CallContext& ctx) {
  Reply r;
  r.call_id = m.call_id;
  try {
    const ServiceFn* fn = services.find(m.method);
    // a message-valued last argument is fine for a real service method
    if (!fn && m.is_wrapper()) raise(FaultKind::kChannel, Phase::kIndication, "dispatch", "still wrapped: " + m.method);
    if (!fn) raise(FaultKind::kApplication, Phase::kIndication, "", "UnknownMethod: " + m.method);
    emit(ctx, "", "dispatch", m.method);
    r.outcome = (*fn)(m.params);
  } catch (const FaultError& e) {
    r.outcome = e.fault();
  } catch (const std::exception& e) {
    r.outcome = make_fault(FaultKind::kApplication, Phase::kIndication, "", std::string("ServiceError: ") + e.what());
  }
  if (!r.ok()) emit(ctx, r.fault().handler, "fault", r.fault().to_string());
  return r;
}

Bytes Engine::seal_reply(Binding& b, CallContext& ctx, const Reply& r) {
  Bytes frame = marshal_reply(r, Phase::kResponse);
  try {
    Bytes wire = chain_send(b.channel(Phase::kResponse).streams, frame, ctx);
    emit(ctx, "", "send", std::to_string(wire.size()) + " bytes");
    return wire;
  } catch (const std::exception& e) {
    Fault f = as_fault(e, Phase::kResponse, "");
    emit(ctx, f.handler, "fault", f.to_string());
    if (r.ok()) {
      Reply fr;
      fr.call_id = r.call_id;
      fr.outcome = f;
      frame = marshal_reply(fr, Phase::kResponse);
    }
    emit(ctx, "", "send", std::to_string(frame.size()) + " bytes, fault reply in the clear");
    return frame;
  }
}

std::optional<Bytes> Engine::accept_control(const Bytes& wire, Binding& b) {
  Reply r;
  try {
    Message m = unmarshal_message(wire, Phase::kIndication);
    r.call_id = m.call_id;
    auto ctx = context(b, m.call_id, Phase::kIndication, Side::kAcceptor);
    emit(ctx, "", "control", m.method);
    const ControlMethod* fn = nullptr;
    for (const auto& s : b.stacks.sets) {
      if (auto it = s.control_methods.find(m.method); it != s.control_methods.end()) fn = &it->second;
    }
    if (!fn) raise(FaultKind::kChannel, Phase::kIndication, "", "UnknownControl: " + m.method);
    r.outcome = (*fn)(m.params, ctx);
  } catch (const std::exception& e) {
    r.outcome = as_fault(e, Phase::kIndication, "");
  }
  return marshal_reply(r, Phase::kResponse, true);
}

std::optional<Bytes> Engine::accept(Bytes wire, Binding& b, const ServiceTable& services) {
  if (looks_like_frame(wire)) {
    try {
      if (read_header(wire).is_control()) return accept_control(wire, b);
    } catch (const std::exception&) {
    }
  }

  auto ctx = context(b, CallId{}, Phase::kIndication, Side::kAcceptor);
  ctx.frame = ByteView(wire.data(), wire.size());
  auto& ind = b.channel(Phase::kIndication);

  // Indication faults go back as a fault reply; the service is never reached.
  auto reject = [&](const Fault& f, bool one_cast) -> std::optional<Bytes> {
    const HandlerSet* owner = b.stacks.owner_of(f.handler, Phase::kIndication);
    std::string by = owner && owner->associate ? *owner->associate : "";
    emit(ctx, by, "propagate", f.to_string());
    b.state.remove_all(ctx.call_id);
    if (one_cast) return std::nullopt;
    Reply r;
    r.call_id = ctx.call_id;
    r.outcome = f;
    ctx.phase = Phase::kResponse;
    return seal_reply(b, ctx, r);
  };

  Message m;
  Bytes plain;
  try {
    plain = chain_receive(ind.streams, ctx.frame, ctx);
    m = unmarshal_message(plain, Phase::kIndication);
  } catch (const std::exception& e) {
    Fault f = as_fault(e, Phase::kIndication, "");
    emit(ctx, "", "receive", std::to_string(wire.size()) + " bytes");
    emit(ctx, f.handler, "fault", f.to_string());
    bool one_cast = false;
    try {
      const Bytes& probe = plain.empty() ? wire : plain;
      auto h = read_header(probe);
      ctx.call_id = h.call_id;
      one_cast = h.flags & frame_flags::kOneCast;
    } catch (const std::exception&) {
    }
    return reject(f, one_cast);
  }
  ctx.call_id = m.call_id;
  emit(ctx, "", "receive", std::to_string(wire.size()) + " bytes");
  emit(ctx, "", "enter", m.method);

  auto run = run_stack(ind, m, ctx, false, b.config.scheme);
  if (run.kind == RecoveryOutcome::Kind::kRebind) {
    return reject(make_fault(FaultKind::kChannel, Phase::kIndication, "", "rebind requested by acceptor"), m.one_cast);
  }
  if (run.kind == RecoveryOutcome::Kind::kFailed) return reject(run.fault, m.one_cast);

  const Message& inner = run.out;
  Reply result = dispatch(inner, services, ctx);
  if (m.one_cast) {
    b.state.remove_all(m.call_id);
    return std::nullopt;
  }

  ctx.phase = Phase::kResponse;
  emit(ctx, "", "enter");
  Reply out;
  out.call_id = m.call_id;
  if (result.ok()) {
    auto rrun = run_stack(b.channel(Phase::kResponse), return_message(inner, result.result()), ctx, false,
                          b.config.scheme);
    if (rrun.kind == RecoveryOutcome::Kind::kRepaired) {
      if (rrun.out.method == kReturnMethod && rrun.out.params.size() == 1) {
        out.outcome = rrun.out.params[0];
      } else {
        out.outcome = TaggedValue(rrun.out);
        out.enveloped = true;
      }
    } else {
      out.outcome = rrun.kind == RecoveryOutcome::Kind::kFailed
                        ? rrun.fault
                        : make_fault(FaultKind::kChannel, Phase::kResponse, "", "rebind requested by acceptor");
    }
  } else {
    out.outcome = result.fault();
  }
  auto bytes = seal_reply(b, ctx, out);
  b.state.remove_all(m.call_id);
  return bytes;
}

Reply Engine::call(const Address& to, Message m, bool control) {
  if (!control) {
    auto b = bind(to, ChannelTemplate{});
    return initiate(std::move(m), *b);
  }
  m.call_id = env_.ids().next();
  m.phase = Phase::kRequest;
  Reply r;
  r.call_id = m.call_id;
  env_.trace().emit(Side::kInitiator, Phase::kRequest, "", "control", m.call_id, m.method);
  try {
    std::optional<Bytes> got;
    env_.network().send(to, marshal_message(m, true), SendOptions{true, defaults_.confirm_timeout},
                        [&got](Bytes x) { got = std::move(x); });
    if (!got) raise(FaultKind::kTransport, Phase::kRequest, "", "timeout: no reply to control call");
    r = unmarshal_reply(*got);
  } catch (const std::exception& e) {
    r.outcome = as_fault(e, Phase::kRequest, "");
  }
  return r;
}

// Acceptor

Acceptor::Acceptor(Engine& engine, ChannelTemplate tpl, ServiceTable services)
    : engine_(engine), services_(std::move(services)) {
  binding_ = engine_.bind(Address{}, std::move(tpl));
  services_.export_interfaces(engine_.env().interfaces());
}

std::optional<Bytes> Acceptor::handle(Bytes frame) {
  try {
    return engine_.accept(std::move(frame), *binding_, services_);
  } catch (const std::exception&) {
    return std::nullopt;  // nothing sensible to send back
  }
}

FrameHandler Acceptor::frame_handler() {
  return [this](Bytes f) { return handle(std::move(f)); };
}

}  // namespace chrpc
