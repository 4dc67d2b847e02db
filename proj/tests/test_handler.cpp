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

#include <thread>

#include "chrpc/handler.hpp"
#include "doctest.h"

using namespace chrpc;

namespace {

struct Fixture {
  CallState state{std::chrono::milliseconds(60'000)};
  Session session;
  SeededClock clock{1};
  RandomSource rng{1};
  CallContext ctx{CallId{1, 1}, Phase::kRequest, Side::kInitiator, state, session, clock, rng};
};

class Doubler : public Handler {
 public:
  Doubler() : Handler("Doubler") {}
  HandlerOutcome todo(const Message& m, CallContext& ctx) override {
    remember_input(ctx, m);
    Message out = m;
    out.params.push_back(out.params.back());
    return HandlerOutcome::next(out);
  }
};

Message call() {
  Message m;
  m.method = "answer";
  m.params = {"x"};
  return m;
}

}  // namespace

TEST_SUITE("handler") {

TEST_CASE("call state is keyed by call and key") {
  CallState s;
  CallId a{1, 1}, b{1, 2};
  s.put(a, "k", 1);
  s.put(b, "k", 2);
  s.put(a, "j", 3);
  CHECK(s.get(a, "k")->as_int() == 1);
  CHECK(s.get(b, "k")->as_int() == 2);
  CHECK(s.entry_count(a) == 2);
  s.remove(a, "k");
  CHECK_FALSE(s.get(a, "k"));
  s.put_original(b, call());
  CHECK(s.original(b)->method == "answer");
  s.remove_all(b);
  CHECK_FALSE(s.get(b, "k"));
  CHECK_FALSE(s.original(b));
  CHECK(s.call_count() == 1);
}

TEST_CASE("call state evicts idle calls after the ttl") {
  CallState s(std::chrono::milliseconds(20));
  s.put({1, 1}, "k", 1);
  std::this_thread::sleep_for(std::chrono::milliseconds(40));
  s.sweep();
  CHECK(s.call_count() == 0);
}

TEST_CASE("base handler defaults") {
  Fixture f;
  Handler h("Plain");
  auto m = call();
  auto t = h.todo(m, f.ctx);
  REQUIRE(t.has_message());
  CHECK(t.message() == m);
  auto c = h.clear(m, make_fault(FaultKind::kChannel, Phase::kRequest, "X", "boom"), f.ctx);
  REQUIRE_FALSE(c.has_message());
  CHECK(c.control().kind == Control::kUnclearable);
  auto u = h.undo(m, Fault{}, f.ctx);
  CHECK(u.message() == m);
  CHECK(h.redo(m, f.ctx).message() == m);
}

TEST_CASE("undo restores the remembered input") {
  Fixture f;
  Doubler d;
  auto m = call();
  auto out = d.todo(m, f.ctx).message();
  CHECK(out.params.size() == 2);
  CHECK(d.undo(out, Fault{}, f.ctx).message() == m);
}

TEST_CASE("handler sets deploy per phase") {
  HandlerSet s("Timestamp", Layer::kCall);
  auto h = std::make_shared<Handler>("StampIssuer");
  s.deploy(Phase::kRequest, h);
  CHECK(s.get_handler(Phase::kRequest) == h);
  CHECK_FALSE(s.get_handler(Phase::kIndication));
  CHECK(s.populated());
  CHECK_FALSE(HandlerSet("Empty", Layer::kCall).populated());
}

TEST_CASE("catalog lookup falls back to the name before the dot") {
  HandlerCatalog c;
  CatalogEntry e;
  e.make = [](const std::string& n, const Params&, HandlerEnv&) { return HandlerSet(n, Layer::kCall); };
  c.add("Probe", e);
  CHECK(c.find("Probe"));
  CHECK(c.find("Probe.A"));
  CHECK_FALSE(c.find("Prob"));
  CHECK(c.names() == std::vector<std::string>{"Probe"});
}

}  // TEST_SUITE
