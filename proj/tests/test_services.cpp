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
#include "chrpc/trace.hpp"
#include "doctest.h"

using namespace chrpc;

namespace {

// Textbook FNV-1a 64, written out independently of the library.
std::uint64_t ref_fnv(const Bytes& b) {
  std::uint64_t h = 14695981039346656037ull;
  for (auto c : b) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Bytes bytes_of(std::string_view s) { return Bytes(s.begin(), s.end()); }

void put_be64(Bytes& out, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Party {
  CallState state;
  Session session;
  SeededClock clock{42};
  RandomSource rng{42};
  UsageLog log;
  CallContext ctx(Phase p, chrpc::Side s = chrpc::Side::kInitiator) {
    return CallContext{CallId{7, 7}, p, s, state, session, clock, rng};
  }
};

// Stands in for the peer: answers key exchanges with a real acceptor-side
// negotiator over its own session.
class Peer : public OutOfBand {
 public:
  Party far;
  KeyNegotiator answerer{"psk", 60'000};
  int calls = 0;
  Reply call(const Address&, Message m, bool control) override {
    ++calls;
    CHECK(control);
    auto ctx = far.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
    Reply r;
    r.outcome = answerer.answer_exchange(m.params, ctx);
    return r;
  }
};

Message call() {
  Message m;
  m.target = Address::loopback("S");
  m.return_address = Address::loopback("C");
  m.method = "answer";
  m.params = {"hi"};
  m.call_id = {7, 7};
  return m;
}

}  // namespace

TEST_SUITE("services") {

TEST_CASE("fnv-1a 64 matches published vectors and a reference loop") {
  CHECK(fnv1a64(Bytes{}) == 0xcbf29ce484222325ull);
  CHECK(fnv1a64(bytes_of("a")) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64(bytes_of("foobar")) == 0x85944171f73967e8ull);
  for (auto s : {"", "x", "channel objects", "You said:hello"}) CHECK(fnv1a64(bytes_of(s)) == ref_fnv(bytes_of(s)));
}

TEST_CASE("keystream blocks and derivation follow their definitions") {
  KeyBytes key{};
  for (std::size_t i = 0; i < key.size(); ++i) key[i] = static_cast<std::uint8_t>(i);
  Bytes in(key.begin(), key.end());
  put_be64(in, 3);
  CHECK(keystream_block(key, 3) == ref_fnv(in));

  Bytes data = bytes_of("sixteen bytes!!! and some more");
  auto enc = apply_keystream(data, key);
  Bytes stream;
  for (std::uint64_t i = 0; i < 4; ++i) put_be64(stream, keystream_block(key, i));
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(enc[i] == (data[i] ^ stream[i]));
  CHECK(apply_keystream(enc, key) == data);

  Bytes nc(16, 1), ns(16, 2);
  auto k = derive_key("psk", nc, ns);
  for (std::uint8_t j = 0; j < 4; ++j) {
    Bytes in2 = bytes_of("psk");
    in2.insert(in2.end(), nc.begin(), nc.end());
    in2.insert(in2.end(), ns.begin(), ns.end());
    in2.push_back(j);
    Bytes expect;
    put_be64(expect, ref_fnv(in2));
    CHECK(Bytes(k.begin() + j * 8, k.begin() + j * 8 + 8) == expect);
  }
}

TEST_CASE("key negotiation, encryption and decryption agree across sides") {
  Peer peer;
  Party near;
  auto ctx = near.ctx(Phase::kRequest);
  ctx.out_of_band = &peer;
  KeyNegotiator kn("psk", 60'000);
  auto wrapped = kn.todo(call(), ctx).message();
  CHECK(wrapped.method == KeyNegotiator::kWrapper);
  CHECK(peer.calls == 1);
  kn.todo(call(), ctx);
  CHECK(peer.calls == 1);  // key reused

  Encryptor enc;
  auto plain = bytes_of("frame bytes");
  auto sealed = enc.apply(plain, ctx);
  CHECK(sealed.size() == plain.size() + 16);

  // The far side knows the key under the same id.
  auto far = peer.far.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  Decryptor dec;
  CHECK(dec.apply(sealed, far) == plain);
  CHECK(far.exchange.count("Encryption.key"));

  // and the far side's indication negotiator recognises the nonce
  KeyNegotiator& acceptor = peer.answerer;
  CHECK(acceptor.todo(wrapped, far).message() == call());

  auto tampered = sealed;
  tampered[10] ^= 1;
  CHECK_THROWS_WITH_AS(dec.apply(tampered, far), doctest::Contains("integrity"), FaultError);
}

TEST_CASE("an expired key is refused and renegotiation clears it") {
  Peer peer;
  Party near;
  auto ctx = near.ctx(Phase::kRequest);
  ctx.out_of_band = &peer;
  KeyNegotiator kn("psk", 10);
  kn.todo(call(), ctx);
  near.clock.advance(1000);
  Encryptor enc;
  try {
    enc.apply(bytes_of("x"), ctx);
    FAIL("expected key-expired");
  } catch (const FaultError& e) {
    CHECK(e.fault().detail == "key-expired");
    auto c = kn.clear(call(), e.fault(), ctx);
    CHECK(c.has_message());
    CHECK(peer.calls == 2);
  }
  CHECK_NOTHROW(enc.apply(bytes_of("x"), ctx));
}

TEST_CASE("undo inverts todo for every wrapping handler") {
  Peer peer;
  Party s;
  auto ctx = s.ctx(Phase::kRequest);
  ctx.out_of_band = &peer;
  std::vector<std::shared_ptr<Handler>> hs = {
      std::make_shared<KeyNegotiator>("psk", 60'000), std::make_shared<StampIssuer>(),
      std::make_shared<SequenceIssuer>(),              std::make_shared<AccountTagger>("acct"),
      std::make_shared<UsageLogger>(&s.log),           std::make_shared<Probe>("Probe", 0, false, FaultKind::kChannel),
      std::make_shared<Handler>("Plain")};
  for (auto& h : hs) {
    CAPTURE(h->name());
    auto out = h->todo(call(), ctx).message();
    CHECK(h->undo(out, Fault{}, ctx).message() == call());
  }
}

TEST_CASE("checkers unwrap, and their undo restores the wrapper") {
  Party s;
  auto req = s.ctx(Phase::kRequest);
  auto ind = s.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  StampIssuer si;
  StampChecker sc(5000);
  auto w = si.todo(call(), req).message();
  CHECK(sc.todo(w, ind).message() == call());
  CHECK(sc.undo(call(), Fault{}, ind).message() == w);
}

TEST_CASE("stale stamps are refused") {
  Party s;
  auto req = s.ctx(Phase::kRequest);
  auto w = StampIssuer().todo(call(), req).message();
  s.clock.advance(10'000);
  auto ind = s.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  CHECK_THROWS_WITH_AS(StampChecker(5000).todo(w, ind), doctest::Contains("stale stamp"), FaultError);
}

TEST_CASE("sequence numbers: monotone at indication, echoed and matched at confirmation") {
  Party client, server;
  SequenceIssuer issue;
  SequenceChecker check;
  auto req = client.ctx(Phase::kRequest);
  auto w1 = issue.todo(call(), req).message();
  auto ind = server.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  CHECK(check.todo(w1, ind).message() == call());
  CHECK_THROWS_AS(check.todo(w1, ind), FaultError);  // same n again

  // redo keeps the stored number
  CHECK(issue.redo(call(), req).message() == w1);

  SequenceIssuer echo;
  ind.phase = Phase::kResponse;
  auto resp = echo.todo(call(), ind).message();
  CHECK(resp.params[0] == w1.params[0]);

  SequenceChecker conf;
  auto c = client.ctx(Phase::kConfirmation);
  CHECK_NOTHROW(conf.todo(resp, c));
  auto other = wrap(SequenceIssuer::kWrapper, call(), {std::int64_t{99}});
  CHECK_THROWS_AS(conf.todo(other, c), FaultError);
}

TEST_CASE("replay detector window") {
  Party s;
  ReplayDetector rd(2);
  auto ctx = s.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  Bytes f1 = bytes_of("one"), f2 = bytes_of("two"), f3 = bytes_of("three");
  ctx.frame = f1;
  CHECK_NOTHROW(rd.todo(call(), ctx));
  CHECK_THROWS_WITH_AS(rd.todo(call(), ctx), doctest::Contains("replayed"), FaultError);
  ctx.frame = f2;
  rd.todo(call(), ctx);
  ctx.frame = f3;
  rd.todo(call(), ctx);
  CHECK(rd.size() == 2);
  ctx.frame = f1;  // evicted, so accepted again
  CHECK_NOTHROW(rd.todo(call(), ctx));
}

TEST_CASE("usage logger retries a failed write once") {
  Party s;
  UsageLogger ul(&s.log);
  auto ctx = s.ctx(Phase::kRequest);
  s.log.fail_next(1);
  CHECK_NOTHROW(ul.todo(call(), ctx));
  REQUIRE(s.log.lines().size() == 1);
  CHECK(s.log.lines()[0].find("REQUEST\tanswer\t") != std::string::npos);
  s.log.fail_next(2);
  CHECK_THROWS_AS(ul.todo(call(), ctx), FaultError);
}

TEST_CASE("accounting tags and reads the account") {
  Party s;
  auto req = s.ctx(Phase::kRequest);
  auto w = AccountTagger("acme").todo(call(), req).message();
  auto ind = s.ctx(Phase::kIndication, chrpc::Side::kAcceptor);
  CHECK(AccountReader(&s.log).todo(w, ind).message() == call());
  CHECK(s.log.lines().back().find("billedTo:acme") != std::string::npos);
}

TEST_CASE("bundled catalog carries every channel object") {
  auto c = bundled_catalog();
  for (auto n : {"KeyNegotiator", "Timestamp", "Sequence", "ReplayDetector", "Encryption", "UsageLogger",
                 "Accounting", "Probe", "Relocator"}) {
    CAPTURE(n);
    CHECK(c.find(n));
  }
  CHECK(c.find("Encryption")->layer == Layer::kStream);
  CHECK_FALSE(c.find("ReplayDetector")->needs_counterpart);
}

}  // TEST_SUITE
