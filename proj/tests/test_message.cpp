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

#include <cmath>
#include <set>

#include "chrpc/message.hpp"
#include "doctest.h"

using namespace chrpc;

TEST_SUITE("message") {

TEST_CASE("address text form round-trips") {
  auto a = Address::parse("tcp://127.0.0.1:7000/AnswererServer");
  CHECK(a.transport == TransportKind::kTcp);
  CHECK(a.host == "127.0.0.1");
  CHECK(a.port == 7000);
  CHECK(a.object == "AnswererServer");
  CHECK(Address::parse(a.to_string()) == a);

  auto l = Address::parse("loopback:///Registry");
  CHECK(l == Address::loopback("Registry"));
  CHECK(Address::parse(l.to_string()) == l);

  CHECK_THROWS_AS(Address::parse("carrier-pigeon://x:1/y"), std::invalid_argument);
  CHECK_THROWS_AS(Address::parse("tcp://host/obj"), std::invalid_argument);
  CHECK_THROWS_AS(Address::parse("tcp://host:99999/obj"), std::invalid_argument);
}

TEST_CASE("wrap keeps the inner call intact and unwrap recovers it") {
  Message m;
  m.target = Address::loopback("S");
  m.return_address = Address::loopback("C");
  m.method = "answer";
  m.params = {"hi"};
  m.call_id = {1, 2};

  auto w = wrap("stampedAt", m, {std::int64_t{42}});
  CHECK(w.method == "stampedAt");
  CHECK(w.is_wrapper());
  CHECK(w.target == m.target);
  CHECK(w.call_id == m.call_id);
  REQUIRE(w.params.size() == 2);
  CHECK(w.params[0].as_int() == 42);

  auto u = unwrap(w);
  CHECK(u.inner == m);
  REQUIRE(u.extra.size() == 1);
  CHECK(u.extra[0].as_int() == 42);
}

TEST_CASE("unwrap of a plain call is a channel fault") {
  Message m;
  m.method = "answer";
  m.params = {"hi"};
  try {
    unwrap(m, Phase::kIndication, "StampChecker");
    FAIL("expected a fault");
  } catch (const FaultError& e) {
    CHECK(e.fault().kind == FaultKind::kChannel);
    CHECK(e.fault().handler == "StampChecker");
    CHECK(e.fault().detail.rfind("NotAWrapper", 0) == 0);
  }
}

TEST_CASE("retarget follows the nesting chain") {
  Message m;
  m.target = Address::loopback("Old");
  m.method = "answer";
  auto w = wrap("b", wrap("a", m));
  auto r = retarget(w, Address::loopback("Old"), Address::loopback("New"));
  CHECK(r.target.object == "New");
  CHECK(unwrap(r).inner.target.object == "New");
  CHECK(unwrap(unwrap(r).inner).inner.target.object == "New");
}

TEST_CASE("one-cast inference from signatures") {
  InterfaceRegistry reg;
  reg.add("tell", Signature{false, {}});
  reg.add("answer", Signature{true, {}});
  reg.add("store", Signature{false, {"Full"}});
  Message m;
  m.method = "tell";
  CHECK(is_one_cast(m, reg));
  m.method = "answer";
  CHECK_FALSE(is_one_cast(m, reg));
  m.method = "store";  // can fail, so the caller must hear back
  CHECK_FALSE(is_one_cast(m, reg));
  m.one_cast = true;
  CHECK(is_one_cast(m, reg));
  m.one_cast = false;
  m.method = "nope";
  try {
    is_one_cast(m, reg);
    FAIL("expected UnknownMethod");
  } catch (const FaultError& e) {
    CHECK(e.fault().kind == FaultKind::kApplication);
    CHECK(e.fault().detail.find("UnknownMethod") != std::string::npos);
  }
}

TEST_CASE("tagged values compare by content, floats by bits") {
  CHECK(TaggedValue(std::nan("")) == TaggedValue(std::nan("")));
  CHECK_FALSE(TaggedValue(0.0) == TaggedValue(-0.0));
  CHECK(TaggedValue("x") == TaggedValue(std::string("x")));
  CHECK_FALSE(TaggedValue(std::int64_t{1}) == TaggedValue(true));
  CHECK_THROWS_AS(TaggedValue("x").as_int(), std::logic_error);
}

TEST_CASE("call ids are unique, and reproducible when seeded") {
  CallIdGenerator g;
  std::set<CallId> seen;
  for (int i = 0; i < 1000; ++i) CHECK(seen.insert(g.next()).second);

  CallIdGenerator a(99), b(99), c(100);
  auto x = a.next();
  CHECK(x == b.next());
  CHECK_FALSE(x == c.next());
  CHECK_FALSE(x.is_zero());
}

TEST_CASE("seeded clock starts at a seed-derived epoch and ticks per read") {
  SeededClock c(5);
  auto t0 = c.now_ms();
  CHECK(t0 == SeededClock::epoch_for(5));
  CHECK(c.now_ms() == t0 + 1);
  c.advance(1000);
  CHECK(c.now_ms() == t0 + 1002);
}

TEST_CASE("iso8601 rendering") {
  CHECK(iso8601_ms(0) == "1970-01-01T00:00:00.000Z");
  CHECK(iso8601_ms(1700000000123) == "2023-11-14T22:13:20.123Z");
}

}  // TEST_SUITE
