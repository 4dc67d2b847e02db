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

// Bundled channel objects: the secured-delivery set (key negotiation,
// timestamps, sequence numbers, encryption, replay detection), usage
// logging, accounting, and a diagnostic probe.
//
// The cipher and key derivation are deliberately toy primitives built on
// FNV-1a. They show where the services sit in the channels; they provide
// no confidentiality.

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <string>
#include <unordered_set>

#include "chrpc/handler.hpp"

namespace chrpc {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv1a64(ByteView data, std::uint64_t seed = kFnvOffset);

using KeyBytes = std::array<std::uint8_t, 32>;

struct SessionKey {
  KeyBytes key{};
  std::int64_t established_ms = 0;
  std::int64_t expiry_ms = 0;

  bool expired(std::int64_t now_ms) const { return now_ms - established_ms > expiry_ms; }
  std::uint64_t id() const;
};

// Block i of the keystream: FNV-1a 64 over (key || big-endian u64 i),
// emitted big-endian.
std::uint64_t keystream_block(const KeyBytes& key, std::uint64_t counter);
// XOR with the keystream starting at block `counter_start`. Involution.
Bytes apply_keystream(ByteView data, const KeyBytes& key, std::uint64_t counter_start = 0);

// key = concat over j in 0..3 of FNV-1a64(psk || nc || ns || u8 j), big-endian.
KeyBytes derive_key(std::string_view psk, ByteView nc, ByteView ns);
std::uint64_t key_confirmation(const KeyBytes& key);

// Session-table helpers shared by the negotiator and the cipher.
void store_key(Session& s, const SessionKey& k);
std::optional<SessionKey> find_key(const Session& s, std::uint64_t id);

// Encrypted stream unit: key-id u64 | keystream XOR of the frame | tag u64,
// where tag = FNV-1a64(key || plaintext).
class Encryptor final : public StreamHandler {
 public:
  Encryptor() : StreamHandler("Encryptor") {}
  Bytes apply(ByteView data, CallContext& ctx) override;
};

class Decryptor final : public StreamHandler {
 public:
  Decryptor() : StreamHandler("Decryptor") {}
  Bytes apply(ByteView data, CallContext& ctx) override;
};

// Initiator: keeps a current session key (negotiating with the peer's
// counterpart over control traffic when there is none or it has expired)
// and wraps the call as negotiatedWith(nonce, inner).
// Acceptor: unwraps and checks the nonce names a known session.
class KeyNegotiator final : public Handler {
 public:
  KeyNegotiator(std::string psk, std::int64_t expiry_ms)
      : Handler("KeyNegotiator"), psk_(std::move(psk)), expiry_ms_(expiry_ms) {}

  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  HandlerOutcome clear(const Message& m, const Fault& f, CallContext& ctx) override;
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;

  // Initiator side of the exchange; returns the new key.
  SessionKey negotiate(CallContext& ctx);
  // Acceptor side: params [nonce Nc] -> [nonce Ns, confirmation].
  TaggedValue answer_exchange(const std::vector<TaggedValue>& params, CallContext& ctx);

  static constexpr const char* kExchangeMethod = "$keyExchange";
  static constexpr const char* kWrapper = "negotiatedWith";

 private:
  bool recoverable(const Fault& f) const;

  std::string psk_;
  std::int64_t expiry_ms_;
};

class StampIssuer final : public Handler {
 public:
  StampIssuer() : Handler("StampIssuer") {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;
  static constexpr const char* kWrapper = "stampedAt";
};

class StampChecker final : public Handler {
 public:
  explicit StampChecker(std::int64_t skew_ms) : Handler("StampChecker"), skew_ms_(skew_ms) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;

 private:
  std::int64_t skew_ms_;
};

// REQUEST: numbers calls per binding, keeping the number in call state so
// redo resends the same one. RESPONSE: echoes the number the indication
// checker accepted.
class SequenceIssuer final : public Handler {
 public:
  SequenceIssuer() : Handler("SequenceIssuer") {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;
  HandlerOutcome redo(const Message& m, CallContext& ctx) override;
  static constexpr const char* kWrapper = "sequenced";

 private:
  std::atomic<std::int64_t> next_{0};
};

// INDICATION: accepts n only if above the last accepted from that initiator.
// CONFIRMATION: accepts n only if it matches what the request carried.
class SequenceChecker final : public Handler {
 public:
  SequenceChecker() : Handler("SequenceChecker") {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;

 private:
  std::mutex mu_;
  std::map<std::string, std::int64_t> last_;
};

// Rejects a frame whose FNV-1a checksum is in a bounded FIFO window.
class ReplayDetector final : public Handler {
 public:
  explicit ReplayDetector(std::size_t capacity) : Handler("ReplayDetector"), capacity_(capacity) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  std::size_t size() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<std::uint64_t> order_;
  std::unordered_set<std::uint64_t> seen_;
};

class UsageLogger final : public Handler {
 public:
  explicit UsageLogger(UsageLog* log) : Handler("UsageLogger"), log_(log) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;

 private:
  UsageLog* log_;
};

class AccountTagger final : public Handler {
 public:
  explicit AccountTagger(std::string account) : Handler("AccountTagger"), account_(std::move(account)) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;
  static constexpr const char* kWrapper = "billedTo";

 private:
  std::string account_;
};

class AccountReader final : public Handler {
 public:
  explicit AccountReader(UsageLog* log) : Handler("AccountReader"), log_(log) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;

 private:
  UsageLog* log_;
};

// Diagnostic channel object: identity, but fails its first `failures` todo
// calls and optionally clears faults raised below it.
class Probe final : public Handler {
 public:
  Probe(std::string name, int failures, bool clears, FaultKind kind)
      : Handler(std::move(name)), failures_(failures), clears_(clears), kind_(kind) {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override;
  HandlerOutcome clear(const Message& m, const Fault& f, CallContext& ctx) override;
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;

 private:
  std::atomic<int> failures_;
  bool clears_;
  FaultKind kind_;
};

// Every bundled channel object, including the Relocator.
HandlerCatalog bundled_catalog();

}  // namespace chrpc
