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

#include "chrpc/services.hpp"

#include <bit>
#include <cstdlib>

#include "chrpc/binding.hpp"

namespace chrpc {

std::uint64_t fnv1a64(ByteView data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : data) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t SessionKey::id() const { return fnv1a64(key); }

std::uint64_t keystream_block(const KeyBytes& key, std::uint64_t counter) {
  Bytes in(key.begin(), key.end());
  ByteWriter(in).u64(counter);
  return fnv1a64(in);
}

Bytes apply_keystream(ByteView data, const KeyBytes& key, std::uint64_t counter_start) {
  Bytes out(data.begin(), data.end());
  std::uint64_t block = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i % 8 == 0) block = keystream_block(key, counter_start + i / 8);
    out[i] ^= static_cast<std::uint8_t>(block >> (56 - 8 * (i % 8)));
  }
  return out;
}

KeyBytes derive_key(std::string_view psk, ByteView nc, ByteView ns) {
  KeyBytes key{};
  for (std::uint8_t j = 0; j < 4; ++j) {
    Bytes in;
    ByteWriter w(in);
    w.raw(as_view(psk));
    w.raw(nc);
    w.raw(ns);
    w.u8(j);
    auto h = fnv1a64(in);
    for (int b = 0; b < 8; ++b) key[j * 8 + b] = static_cast<std::uint8_t>(h >> (56 - 8 * b));
  }
  return key;
}

std::uint64_t key_confirmation(const KeyBytes& key) {
  Bytes in(key.begin(), key.end());
  ByteWriter(in).raw(as_view("confirm"));
  return fnv1a64(in);
}

namespace {

std::string hex64(std::uint64_t v) {
  Bytes b;
  ByteWriter(b).u64(v);
  return to_hex(b);
}

std::int64_t as_i64(std::uint64_t v) { return std::bit_cast<std::int64_t>(v); }
std::uint64_t as_u64(std::int64_t v) { return std::bit_cast<std::uint64_t>(v); }

const char* const kCurrentKey = "key/current";

std::uint64_t read_u64(ByteView b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | b[i];
  return v;
}

// Unwraps `m`, insisting on the expected wrapper method.
Unwrapped expect_wrapper(const Message& m, const char* method, const CallContext& ctx,
                         const std::string& handler, std::size_t extras) {
  auto u = unwrap(m, ctx.phase, handler);
  if (m.method != method || u.extra.size() != extras) {
    raise(FaultKind::kChannel, ctx.phase, handler,
          std::string("expected ") + method + " wrapper, got '" + m.method + "'");
  }
  return u;
}

}  // namespace

void store_key(Session& s, const SessionKey& k) {
  s.put("key/" + hex64(k.id()),
        TaggedValue::List{Bytes(k.key.begin(), k.key.end()), k.established_ms, k.expiry_ms});
}

std::optional<SessionKey> find_key(const Session& s, std::uint64_t id) {
  auto v = s.get("key/" + hex64(id));
  if (!v) return std::nullopt;
  const auto& l = v->as_list();
  SessionKey k;
  const auto& kb = l.at(0).as_bytes();
  if (kb.size() != k.key.size()) return std::nullopt;
  std::copy(kb.begin(), kb.end(), k.key.begin());
  k.established_ms = l.at(1).as_int();
  k.expiry_ms = l.at(2).as_int();
  return k;
}

// Encryption

Bytes Encryptor::apply(ByteView data, CallContext& ctx) {
  std::optional<std::uint64_t> id;
  if (ctx.side == Side::kInitiator) {
    if (auto cur = ctx.session.get(kCurrentKey)) id = as_u64(cur->as_int());
  } else if (auto it = ctx.exchange.find("Encryption.key"); it != ctx.exchange.end()) {
    id = as_u64(it->second.as_int());
  }
  if (!id) raise(FaultKind::kChannel, ctx.phase, name(), "no session key");
  auto key = find_key(ctx.session, *id);
  if (!key) raise(FaultKind::kChannel, ctx.phase, name(), "no session key");
  if (key->expired(ctx.clock.now_ms())) raise(FaultKind::kChannel, ctx.phase, name(), "key-expired");

  Bytes tag_in(key->key.begin(), key->key.end());
  tag_in.insert(tag_in.end(), data.begin(), data.end());
  Bytes out;
  out.reserve(data.size() + 16);
  ByteWriter w(out);
  w.u64(*id);
  w.raw(apply_keystream(data, key->key));
  w.u64(fnv1a64(tag_in));
  return out;
}

Bytes Decryptor::apply(ByteView data, CallContext& ctx) {
  if (data.size() < 16) raise(FaultKind::kChannel, ctx.phase, name(), "ciphertext too short");
  auto id = read_u64(data.first(8));
  auto key = find_key(ctx.session, id);
  if (!key) raise(FaultKind::kChannel, ctx.phase, name(), "unknown key " + hex64(id));
  auto plain = apply_keystream(data.subspan(8, data.size() - 16), key->key);
  Bytes tag_in(key->key.begin(), key->key.end());
  tag_in.insert(tag_in.end(), plain.begin(), plain.end());
  if (fnv1a64(tag_in) != read_u64(data.last(8))) {
    raise(FaultKind::kChannel, ctx.phase, name(), "integrity check failed");
  }
  ctx.exchange["Encryption.key"] = as_i64(id);
  return plain;
}

// Key negotiation

SessionKey KeyNegotiator::negotiate(CallContext& ctx) {
  if (!ctx.out_of_band) fail(ctx, "no path to counterpart");
  Bytes nc = ctx.rng.bytes(16);
  Message ex;
  ex.target = ctx.peer;
  ex.return_address = ctx.peer;
  ex.method = kExchangeMethod;
  ex.params = {nc};
  Reply r = ctx.out_of_band->call(ctx.peer, std::move(ex), true);
  if (!r.ok()) {
    throw FaultError(contain(make_fault(FaultKind::kChannel, ctx.phase, name(), "key exchange failed"), r.fault()));
  }
  const auto& l = r.result().as_list();
  if (l.size() != 2) fail(ctx, "malformed key exchange reply");
  SessionKey k;
  k.key = derive_key(psk_, nc, l[0].as_bytes());
  if (as_u64(l[1].as_int()) != key_confirmation(k.key)) fail(ctx, "key confirmation mismatch");
  k.established_ms = ctx.clock.now_ms();
  k.expiry_ms = expiry_ms_;
  store_key(ctx.session, k);
  ctx.session.put("nonce-of/" + hex64(k.id()), nc);
  ctx.session.put(kCurrentKey, as_i64(k.id()));
  return k;
}

TaggedValue KeyNegotiator::answer_exchange(const std::vector<TaggedValue>& params, CallContext& ctx) {
  if (params.size() != 1 || params[0].tag() != ValueTag::kBytes || params[0].as_bytes().size() != 16) {
    fail(ctx, "malformed key exchange request");
  }
  const Bytes& nc = params[0].as_bytes();
  Bytes ns = ctx.rng.bytes(16);
  SessionKey k;
  k.key = derive_key(psk_, nc, ns);
  k.established_ms = ctx.clock.now_ms();
  k.expiry_ms = expiry_ms_;
  store_key(ctx.session, k);
  ctx.session.put("nonce/" + to_hex(nc), as_i64(k.id()));
  return TaggedValue::List{ns, as_i64(key_confirmation(k.key))};
}

HandlerOutcome KeyNegotiator::todo(const Message& m, CallContext& ctx) {
  if (ctx.phase == Phase::kRequest) {
    std::optional<SessionKey> key;
    if (auto cur = ctx.session.get(kCurrentKey)) key = find_key(ctx.session, as_u64(cur->as_int()));
    if (!key || key->expired(ctx.clock.now_ms())) key = negotiate(ctx);
    auto nc = ctx.session.get("nonce-of/" + hex64(key->id()));
    if (!nc) fail(ctx, "no nonce for current key");
    return HandlerOutcome::next(wrap(kWrapper, m, {*nc}));
  }
  remember_input(ctx, m);
  auto u = expect_wrapper(m, kWrapper, ctx, name(), 1);
  if (u.extra[0].tag() != ValueTag::kBytes) fail(ctx, "nonce is not bytes");
  auto id = ctx.session.get("nonce/" + to_hex(u.extra[0].as_bytes()));
  if (!id || !find_key(ctx.session, as_u64(id->as_int()))) fail(ctx, "unknown session");
  return HandlerOutcome::next(std::move(u.inner));
}

bool KeyNegotiator::recoverable(const Fault& f) const {
  return f.detail.find("key-expired") != std::string::npos ||
         f.detail.find("no session key") != std::string::npos;
}

HandlerOutcome KeyNegotiator::clear(const Message& m, const Fault& f, CallContext& ctx) {
  if (ctx.phase != Phase::kRequest || !recoverable(f)) return HandlerOutcome::unclearable();
  negotiate(ctx);
  return HandlerOutcome::next(m);
}

HandlerOutcome KeyNegotiator::undo(const Message& m, const Fault& f, CallContext& ctx) {
  if (ctx.phase == Phase::kRequest) {
    if (recoverable(f)) {
      negotiate(ctx);
      return HandlerOutcome::cleared("renegotiated session key");
    }
    if (m.method == kWrapper && m.is_wrapper()) return HandlerOutcome::next(unwrap(m).inner);
  }
  return Handler::undo(m, f, ctx);
}

// Timestamps

HandlerOutcome StampIssuer::todo(const Message& m, CallContext& ctx) {
  return HandlerOutcome::next(wrap(kWrapper, m, {static_cast<std::int64_t>(ctx.clock.now_ms())}));
}

HandlerOutcome StampIssuer::undo(const Message& m, const Fault& f, CallContext& ctx) {
  if (m.method == kWrapper && m.is_wrapper()) return HandlerOutcome::next(unwrap(m).inner);
  return Handler::undo(m, f, ctx);
}

HandlerOutcome StampChecker::todo(const Message& m, CallContext& ctx) {
  remember_input(ctx, m);
  auto u = expect_wrapper(m, StampIssuer::kWrapper, ctx, name(), 1);
  if (u.extra[0].tag() != ValueTag::kInt64) fail(ctx, "stamp is not an integer");
  auto t = u.extra[0].as_int();
  auto now = ctx.clock.now_ms();
  auto skew = now > t ? now - t : t - now;
  if (skew > skew_ms_) {
    fail(ctx, "stale stamp: off by " + std::to_string(skew) + " ms, allowance " + std::to_string(skew_ms_) + " ms");
  }
  return HandlerOutcome::next(std::move(u.inner));
}

// Sequencing

HandlerOutcome SequenceIssuer::todo(const Message& m, CallContext& ctx) {
  std::int64_t n = 0;
  if (ctx.phase == Phase::kResponse) {
    auto it = ctx.exchange.find("Sequence.n");
    if (it == ctx.exchange.end()) fail(ctx, "no accepted sequence number to echo");
    n = it->second.as_int();
  } else {
    n = ++next_;
    ctx.state.put(ctx.call_id, name(), n);
  }
  return HandlerOutcome::next(wrap(kWrapper, m, {n}));
}

HandlerOutcome SequenceIssuer::redo(const Message& m, CallContext& ctx) {
  if (ctx.phase == Phase::kRequest) {
    if (auto n = ctx.state.get(ctx.call_id, name())) return HandlerOutcome::next(wrap(kWrapper, m, {*n}));
  }
  return todo(m, ctx);
}

HandlerOutcome SequenceIssuer::undo(const Message& m, const Fault& f, CallContext& ctx) {
  if (m.method == kWrapper && m.is_wrapper()) return HandlerOutcome::next(unwrap(m).inner);
  return Handler::undo(m, f, ctx);
}

HandlerOutcome SequenceChecker::todo(const Message& m, CallContext& ctx) {
  remember_input(ctx, m);
  auto u = expect_wrapper(m, SequenceIssuer::kWrapper, ctx, name(), 1);
  if (u.extra[0].tag() != ValueTag::kInt64) fail(ctx, "sequence number is not an integer");
  auto n = u.extra[0].as_int();
  if (ctx.phase == Phase::kConfirmation) {
    auto issued = ctx.state.get(ctx.call_id, "SequenceIssuer");
    if (!issued || issued->as_int() != n) {
      fail(ctx, "sequence " + std::to_string(n) + " does not match the request");
    }
  } else {
    std::lock_guard lk(mu_);
    auto& last = last_[m.return_address.to_string()];
    if (n <= last) {
      fail(ctx, "sequence " + std::to_string(n) + " not above last accepted " + std::to_string(last));
    }
    last = n;
    ctx.exchange["Sequence.n"] = n;
  }
  return HandlerOutcome::next(std::move(u.inner));
}

// Replay detection

HandlerOutcome ReplayDetector::todo(const Message& m, CallContext& ctx) {
  if (ctx.frame.empty()) fail(ctx, "no frame bytes to checksum");
  auto sum = fnv1a64(ctx.frame);
  std::lock_guard lk(mu_);
  if (seen_.count(sum)) fail(ctx, "replayed frame, checksum " + hex64(sum));
  seen_.insert(sum);
  order_.push_back(sum);
  while (order_.size() > capacity_) {
    seen_.erase(order_.front());
    order_.pop_front();
  }
  return HandlerOutcome::next(m);
}

std::size_t ReplayDetector::size() const {
  std::lock_guard lk(mu_);
  return order_.size();
}

// Usage and accounting

HandlerOutcome UsageLogger::todo(const Message& m, CallContext& ctx) {
  if (log_) {
    try {
      log_->append(ctx.clock.now_ms(), ctx.phase, m.method, ctx.call_id);
    } catch (const FaultError&) {
      log_->append(ctx.clock.now_ms(), ctx.phase, m.method, ctx.call_id);  // one retry
    }
  }
  return HandlerOutcome::next(m);
}

HandlerOutcome AccountTagger::todo(const Message& m, CallContext&) {
  return HandlerOutcome::next(wrap(kWrapper, m, {account_}));
}

HandlerOutcome AccountTagger::undo(const Message& m, const Fault& f, CallContext& ctx) {
  if (m.method == kWrapper && m.is_wrapper()) return HandlerOutcome::next(unwrap(m).inner);
  return Handler::undo(m, f, ctx);
}

HandlerOutcome AccountReader::todo(const Message& m, CallContext& ctx) {
  remember_input(ctx, m);
  auto u = expect_wrapper(m, AccountTagger::kWrapper, ctx, name(), 1);
  if (u.extra[0].tag() != ValueTag::kText) fail(ctx, "account id is not text");
  if (log_) log_->append(ctx.clock.now_ms(), ctx.phase, "billedTo:" + u.extra[0].as_text(), ctx.call_id);
  return HandlerOutcome::next(std::move(u.inner));
}

// Probe

HandlerOutcome Probe::todo(const Message& m, CallContext& ctx) {
  if (failures_.fetch_sub(1) > 0) raise(kind_, ctx.phase, name(), "probe failure");
  return HandlerOutcome::next(m);
}

HandlerOutcome Probe::clear(const Message& m, const Fault&, CallContext&) {
  return clears_ ? HandlerOutcome::next(m) : HandlerOutcome::unclearable();
}

HandlerOutcome Probe::undo(const Message& m, const Fault&, CallContext&) {
  return clears_ ? HandlerOutcome::cleared("probe cleared") : HandlerOutcome::next(m);
}

// Catalog

namespace {

std::string param(const Params& p, const std::string& key, std::string fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

std::int64_t int_param(const Params& p, const std::string& key, std::int64_t fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  char* end = nullptr;
  auto v = std::strtoll(it->second.c_str(), &end, 10);
  if (!end || *end) throw std::invalid_argument("param " + key + " is not an integer: " + it->second);
  return v;
}

Phase phase_param(const Params& p) {
  auto v = param(p, "phase", "request");
  if (v == "request") return Phase::kRequest;
  if (v == "indication") return Phase::kIndication;
  if (v == "response") return Phase::kResponse;
  if (v == "confirmation") return Phase::kConfirmation;
  throw std::invalid_argument("bad phase param: " + v);
}

}  // namespace

HandlerCatalog bundled_catalog() {
  HandlerCatalog c;

  c.add("KeyNegotiator", {Layer::kCall, true, [](const std::string& n, const Params& p, HandlerEnv&) {
          auto psk = param(p, "psk", "channelrpc-demo-psk");
          auto expiry = int_param(p, "expiry_ms", 3'600'000);
          auto initiator = std::make_shared<KeyNegotiator>(psk, expiry);
          auto acceptor = std::make_shared<KeyNegotiator>(psk, expiry);
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kRequest, initiator).deploy(Phase::kIndication, acceptor);
          set.counterpart = PeerRef{n, "KeyNegotiator"};
          set.control_methods[KeyNegotiator::kExchangeMethod] =
              [acceptor](const std::vector<TaggedValue>& params, CallContext& ctx) {
                return acceptor->answer_exchange(params, ctx);
              };
          return set;
        }});

  c.add("Timestamp", {Layer::kCall, true, [](const std::string& n, const Params& p, HandlerEnv&) {
          auto skew = int_param(p, "skew_ms", 5000);
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kRequest, std::make_shared<StampIssuer>())
              .deploy(Phase::kIndication, std::make_shared<StampChecker>(skew))
              .deploy(Phase::kResponse, std::make_shared<StampIssuer>())
              .deploy(Phase::kConfirmation, std::make_shared<StampChecker>(skew));
          set.counterpart = PeerRef{n, "StampChecker"};
          set.associate = "StampIssuer";
          return set;
        }});

  c.add("Sequence", {Layer::kCall, true, [](const std::string& n, const Params&, HandlerEnv&) {
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kRequest, std::make_shared<SequenceIssuer>())
              .deploy(Phase::kIndication, std::make_shared<SequenceChecker>())
              .deploy(Phase::kResponse, std::make_shared<SequenceIssuer>())
              .deploy(Phase::kConfirmation, std::make_shared<SequenceChecker>());
          set.counterpart = PeerRef{n, "SequenceChecker"};
          set.associate = "SequenceIssuer";
          return set;
        }});

  c.add("ReplayDetector", {Layer::kCall, false, [](const std::string& n, const Params& p, HandlerEnv&) {
          auto cap = static_cast<std::size_t>(std::max<std::int64_t>(1, int_param(p, "capacity", 4096)));
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kIndication, std::make_shared<ReplayDetector>(cap))
              .deploy(Phase::kConfirmation, std::make_shared<ReplayDetector>(cap));
          return set;
        }});

  c.add("Encryption", {Layer::kStream, true, [](const std::string& n, const Params&, HandlerEnv&) {
          HandlerSet set(n, Layer::kStream);
          set.deploy(Phase::kRequest, std::make_shared<Encryptor>())
              .deploy(Phase::kIndication, std::make_shared<Decryptor>())
              .deploy(Phase::kResponse, std::make_shared<Encryptor>())
              .deploy(Phase::kConfirmation, std::make_shared<Decryptor>());
          set.counterpart = PeerRef{n, "Decryptor"};
          set.associate = "Encryptor";
          return set;
        }});

  c.add("UsageLogger", {Layer::kCall, false, [](const std::string& n, const Params&, HandlerEnv& env) {
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kRequest, std::make_shared<UsageLogger>(env.usage_log))
              .deploy(Phase::kResponse, std::make_shared<UsageLogger>(env.usage_log));
          return set;
        }});

  c.add("Accounting", {Layer::kCall, true, [](const std::string& n, const Params& p, HandlerEnv& env) {
          HandlerSet set(n, Layer::kCall);
          set.deploy(Phase::kRequest, std::make_shared<AccountTagger>(param(p, "account", "anonymous")))
              .deploy(Phase::kIndication, std::make_shared<AccountReader>(env.usage_log));
          set.counterpart = PeerRef{n, "AccountReader"};
          return set;
        }});

  c.add("Probe", {Layer::kCall, false, [](const std::string& n, const Params& p, HandlerEnv&) {
          auto kind = param(p, "kind", "channel") == "transport" ? FaultKind::kTransport : FaultKind::kChannel;
          HandlerSet set(n, Layer::kCall);
          set.deploy(phase_param(p), std::make_shared<Probe>(n, static_cast<int>(int_param(p, "fail", 0)),
                                                             int_param(p, "clears", 0) != 0, kind));
          return set;
        }});

  register_relocator(c);
  return c;
}

}  // namespace chrpc
