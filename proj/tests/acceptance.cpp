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

// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "chrpc/marshal.hpp"
#include "chrpc/scenario.hpp"
#include "chrpc/stream.hpp"
#include "rig.hpp"
#include "test_util.hpp"

using namespace chrpc;
using testutil::Rig;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool ok = true;
  std::string detail;
  void fail(const std::string& why) {
    if (ok) detail = why;  // keep the first reason
    ok = false;
  }
};

ChannelTemplate tpl_file(const std::string& name) {
  return parse_template_file(std::string(CHRPC_TEMPLATES) + "/" + name);
}

// Random answer/echo/tell call; returns the method used.
std::string random_call(std::mt19937_64& rng, Message& m) {
  switch (rng() % 3) {
    case 0:
      m.method = "answer";
      m.params = {TaggedValue(testutil::random_text(rng, 40, false))};
      break;
    case 1: {
      m.method = "echo";
      m.params.clear();
      auto n = rng() % 4;
      for (std::size_t i = 0; i < n; ++i) m.params.push_back(testutil::random_value(rng, 2));
      break;
    }
    default:
      m.method = "tell";
      m.params = {TaggedValue(testutil::random_text(rng, 20, false))};
  }
  return m.method;
}

Reply issue(Rig& rig, Binding& b, Message m) {
  m.target = b.peer;
  m.return_address = Address::loopback("Client");
  return rig.engine.initiate(std::move(m), b);
}

// 1. Secured stack is transparent: same results as a bare binding, no faults.
Verdict secure_transparency() {
  Verdict v;
  Rig secure(11), bare(11);
  secure.answerer("Srv", tpl_file("secure.tpl"));
  bare.answerer("Srv");
  auto bs = secure.bind("Srv", tpl_file("secure.tpl"));
  auto bb = bare.bind("Srv");
  std::mt19937_64 rng(2024);
  int faults = 0;
  for (int i = 0; i < 200; ++i) {
    Message m;
    random_call(rng, m);
    auto rs = issue(secure, *bs, m);
    auto rb = issue(bare, *bb, m);
    if (!rs.ok() || !rb.ok()) {
      ++faults;
      v.fail("call " + std::to_string(i) + " faulted: " + (rs.ok() ? rb.fault() : rs.fault()).to_string());
      continue;
    }
    if (rs.result() != rb.result()) v.fail("call " + std::to_string(i) + " results differ");
  }
  if (secure.stats->told != bare.stats->told) v.fail("one-cast counts differ");
  if (v.ok) v.detail = "200 calls, 0 faults, results identical";
  return v;
}

// 2. Two frames per two-way call, one per one-cast; phases as expected.
Verdict frame_accounting() {
  Verdict v;
  int two = 0, one = 0;
  for (auto tname : {"identity.tpl", "secure.tpl", "replay-guard.tpl"}) {
    Rig rig(5);
    auto tpl = tpl_file(tname);
    rig.answerer("Srv", tpl);
    auto b = rig.bind("Srv", tpl);
    issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("warm")}});  // key exchange, if any
    std::mt19937_64 rng(77);
    for (int i = 0; i < 100; ++i) {
      Message m;
      bool one_cast = random_call(rng, m) == "tell";
      auto before = rig.net().frames_seen();
      auto mark = rig.mark();
      auto r = issue(rig, *b, m);
      auto frames = rig.net().frames_seen() - before;
      std::set<Phase> phases;
      auto ev = rig.env.trace().events();
      for (auto k = mark; k < ev.size(); ++k) {
        if (ev[k].phase) phases.insert(*ev[k].phase);
      }
      std::string where = std::string(tname) + " call " + std::to_string(i);
      if (!r.ok()) v.fail(where + " faulted");
      if (one_cast) {
        ++one;
        if (frames != 1) v.fail(where + ": one-cast used " + std::to_string(frames) + " frames");
        if (phases != std::set<Phase>{Phase::kRequest, Phase::kIndication}) v.fail(where + ": wrong phases");
      } else {
        ++two;
        if (frames != 2) v.fail(where + ": two-way call used " + std::to_string(frames) + " frames");
        if (phases.size() != 4) v.fail(where + ": not all four phases traced");
      }
    }
  }
  if (v.ok) v.detail = std::to_string(two) + " two-way, " + std::to_string(one) + " one-cast";
  return v;
}

// Independent of the exact oracle: the recovery events after the fault must
// read clear+ undo* redo* (or undo+clear+ redo*), walking toward the top of
// the stack and then redoing from the top down.
bool recovery_shape_ok(const std::vector<std::string>& steps, RecoveryScheme s) {
  auto at = std::find_if(steps.begin(), steps.end(), [](auto& x) { return x.ends_with(" fault"); });
  if (at == steps.end()) return false;
  std::string kinds;
  std::vector<std::pair<std::string, int>> seq;
  for (auto it = std::next(at); it != steps.end(); ++it) {
    auto sp = it->find(' ');
    auto ev = it->substr(sp + 1);
    if (ev == "todo") break;  // back to normal processing below the failed step
    kinds += (ev == "undo+clear" ? "X" : ev == "clear" ? "C" : ev == "undo" ? "U" : ev == "redo" ? "R" : "?");
    seq.emplace_back(ev, it->at(sp - 1) - 'A');
  }
  std::regex shape(s == RecoveryScheme::kClearThenUndoRedo ? "C+U*R+" : "X+R+");
  if (!std::regex_match(kinds, shape)) return false;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    bool same = seq[i].first == seq[i - 1].first || (seq[i].first == "undo" && seq[i - 1].first == "clear");
    if (seq[i].first == "redo" && seq[i - 1].first == "redo" && seq[i].second != seq[i - 1].second + 1) return false;
    if (seq[i].first != "redo" && same && seq[i].second != seq[i - 1].second - 1) return false;
  }
  auto first_redo = std::find_if(seq.begin(), seq.end(), [](auto& e) { return e.first == "redo"; });
  return first_redo != seq.end() && first_redo->second == 0;
}

// 3. Recovery ordering over every (stack size, fault, clearer, scheme).
Verdict recovery_order() {
  Verdict v;
  int cases = 0;
  for (auto s : {RecoveryScheme::kClearThenUndoRedo, RecoveryScheme::kClearAndUndoThenRedo}) {
    for (std::size_t n = 3; n <= 6; ++n) {
      for (std::size_t fail = 0; fail < n; ++fail) {
        for (std::size_t clearer = 0; clearer <= fail; ++clearer) {  // == fail: nobody clears
          ++cases;
          Rig rig(3);
          rig.answerer("Srv");
          auto b = rig.bind("Srv", testutil::probe_template(n, fail, clearer, s));
          auto r = issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("x")}});
          auto got = testutil::joined(rig.steps(0, "Probe."));
          auto want = testutil::joined(testutil::expected_recovery(n, fail, clearer, s));
          std::ostringstream id;
          id << scheme_name(s) << " n=" << n << " fault@" << fail << " clearer@" << clearer;
          if (got != want) v.fail(id.str() + ": got " + got);
          if (r.ok() != (clearer < fail)) v.fail(id.str() + ": wrong outcome");
          if (!r.ok() && rig.count("dispatch") != 0) v.fail(id.str() + ": unrepaired call reached the server");
          if (r.ok() && !recovery_shape_ok(rig.steps(0, "Probe."), s)) v.fail(id.str() + ": pattern mismatch: " + got);
        }
      }
    }
  }
  if (v.ok) v.detail = std::to_string(cases) + " cases";
  return v;
}

// 4. Server-side fault propagates without dispatch; a damaged reply is
//    resent exactly once and the caller sees success.
Verdict propagation_and_resend() {
  Verdict v;
  {
    Rig rig(8);
    auto tpl = parse_template_text("call Probe.Gate optional phase=indication fail=1\n");
    rig.answerer("Srv", tpl);
    auto b = rig.bind("Srv", tpl);
    auto r = issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("x")}});
    if (r.ok()) v.fail("INDICATION fault did not reach the caller");
    else if (r.fault().origin != Phase::kIndication || r.fault().handler != "Probe.Gate")
      v.fail("fault origin/handler " + r.fault().to_string());
    if (rig.count("dispatch") != 0) v.fail("faulted call was dispatched");
    if (rig.count("propagate") != 1) v.fail("no propagate event");
  }
  {
    Rig rig(8);
    auto tpl = parse_template_text("call KeyNegotiator required psk=k\nstream Encryption required\n");
    rig.answerer("Srv", tpl);
    auto b = rig.bind("Srv", tpl);
    issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("warm")}});
    rig.net().corrupt_byte(rig.net().frames_seen() + 2, 40);
    auto mark = rig.mark();
    auto r = issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("hello")}});
    if (!r.ok() || r.result().as_text() != "You said:hello") v.fail("resent call did not succeed");
    if (rig.count("resend", mark) != 1) v.fail(std::to_string(rig.count("resend", mark)) + " resends, want 1");
  }
  if (v.ok) v.detail = "propagated without dispatch; one transparent resend";
  return v;
}

// 5. Replayed request frames: rejected by replay-protecting stacks only.
Verdict replay() {
  Verdict v;
  std::ostringstream summary;
  for (auto [tname, expect_rejected] : {std::pair{"secure.tpl", true}, std::pair{"replay-guard.tpl", true},
                                        std::pair{"identity.tpl", false}}) {
    Rig rig(21);
    auto tpl = tpl_file(tname);
    rig.answerer("Srv", tpl);
    auto b = rig.bind("Srv", tpl);
    std::vector<Bytes> frames;
    for (int i = 0; i < 100; ++i) {
      rig.net().clear_capture();
      auto r = issue(rig, *b, Message{.method = "answer", .params = {TaggedValue("n" + std::to_string(i))}});
      if (!r.ok()) v.fail(std::string(tname) + ": original call faulted");
      for (auto& c : rig.net().captured()) {
        if (c.reply) continue;
        if (looks_like_frame(c.frame) && read_header(c.frame).is_control()) continue;
        frames.push_back(c.frame);
      }
    }
    if (frames.size() != 100) v.fail(std::string(tname) + ": captured " + std::to_string(frames.size()));
    int rejected = 0;
    for (auto& f : frames) {
      int before = rig.stats->answered;
      rig.net().inject("Srv", f);
      rejected += rig.stats->answered == before;
    }
    int want = expect_rejected ? static_cast<int>(frames.size()) : 0;
    if (rejected != want) v.fail(std::string(tname) + ": " + std::to_string(rejected) + " rejected");
    summary << tname << " " << rejected << "/" << frames.size() << " rejected; ";
  }
  if (v.ok) v.detail = summary.str();
  return v;
}

// 6. Marshalling: random round trips, peek agreement, golden fixtures.
Verdict marshalling() {
  Verdict v;
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    auto m = testutil::random_message(rng, 3);
    auto f = marshal_message(m);
    if (unmarshal_message(f) != m) v.fail("message round trip " + std::to_string(i));
    auto p = peek_method(f);
    if (p.method != m.method || p.call_id != m.call_id || p.one_cast != m.one_cast) v.fail("peek " + std::to_string(i));
    auto r = testutil::random_reply(rng);
    if (unmarshal_reply(marshal_reply(r)) != r) v.fail("reply round trip " + std::to_string(i));
  }
  for (auto& [file, bytes] : testutil::golden_frames()) {
    std::ifstream in(std::string(CHRPC_FIXTURES) + "/" + file);
    std::string hex((std::istreambuf_iterator<char>(in)), {});
    if (testutil::from_hex(hex) != bytes) v.fail("fixture " + file + " differs");
  }
  if (v.ok) v.detail = "1000 messages + 1000 replies, " + std::to_string(testutil::golden_frames().size()) + " fixtures";
  return v;
}

// 7. Segmentation: fragment count, size bound, out-of-order reassembly.
Verdict segmentation() {
  Verdict v;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    std::size_t mtu = 64 + rng() % (1500 - 64 + 1);
    std::size_t len = 1 + rng() % 65536;
    Bytes data(len);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    auto frags = segment(data, mtu, rng());
    std::size_t room = mtu - kFragmentHeaderSize;
    std::size_t want = (len + room - 1) / room;
    std::string id = "len=" + std::to_string(len) + " mtu=" + std::to_string(mtu);
    if (frags.size() != want) v.fail(id + ": " + std::to_string(frags.size()) + " fragments");
    std::vector<Fragment> wire;
    for (auto& f : frags) {
      auto enc = encode_fragment(f);
      if (enc.size() > mtu) v.fail(id + ": fragment over mtu");
      wire.push_back(decode_fragment(enc));
    }
    std::shuffle(wire.begin(), wire.end(), rng);
    Reassembler r;
    std::optional<Bytes> out;
    for (auto& f : wire) out = r.add(f);
    if (out != data) v.fail(id + ": reassembly mismatch");
  }
  if (v.ok) v.detail = "200 (length, mtu) pairs";
  return v;
}

ScenarioResult run_bundled(const std::string& name, std::uint64_t seed) {
  return run_scenario(ScenarioScript::parse_file(std::string(CHRPC_SCENARIOS) + "/" + name), seed);
}

// 8. Relocation: calls keep working after the server moves.
Verdict relocation() {
  Verdict v;
  auto r = run_bundled("relocation.scn", 1);
  for (auto& c : r.checks) {
    if (c.rfind("PASS", 0) != 0) v.fail(c);
  }
  if (!r.passed) v.fail("scenario failed");
  if (v.ok) v.detail = std::to_string(r.checks.size()) + " checks";
  return v;
}

// 9. End to end through the command-line tool over real TCP.
Verdict cli_end_to_end() {
  Verdict v;
  auto dir = fs::temp_directory_path() / ("chrpc-accept-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto ready = (dir / "ready").string();
  pid_t pid = ::fork();
  if (pid == 0) {
    ::execl(CHRPC_CLI, CHRPC_CLI, "serve", "--listen", "tcp://127.0.0.1:0/AnswererServer", "--ready-file",
            ready.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  std::string address;
  for (int i = 0; i < 200 && address.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    std::ifstream in(ready);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    if (!text.empty() && text.back() == '\n') address = text.substr(0, text.size() - 1);  // fully written
  }
  if (address.empty()) {
    v.fail("server never became ready");
  } else {
    std::string cmd = std::string(CHRPC_CLI) + " call --address " + address + " --method answer --arg hello";
    std::string out;
    if (FILE* p = ::popen(cmd.c_str(), "r")) {
      std::array<char, 256> buf{};
      while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
      int status = ::pclose(p);
      if (status != 0) v.fail("call exited with status " + std::to_string(status));
    } else {
      v.fail("popen failed");
    }
    if (out != "You said:hello\n") v.fail("call printed '" + out + "'");
  }
  ::kill(pid, SIGTERM);
  int st = 0;
  ::waitpid(pid, &st, 0);
  fs::remove_all(dir);
  if (v.ok) v.detail = "serve + call over " + address;
  return v;
}

// 10. Determinism: bundled scenarios replay byte for byte under one seed.
Verdict determinism() {
  Verdict v;
  int n = 0;
  for (auto& e : fs::directory_iterator(CHRPC_SCENARIOS)) {
    if (e.path().extension() != ".scn") continue;
    ++n;
    auto name = e.path().filename().string();
    auto a = run_bundled(name, 1234), b = run_bundled(name, 1234);
    if (a.trace != b.trace) v.fail(name + ": traces differ");
    if (a.trace.empty()) v.fail(name + ": empty trace");
  }
  if (n == 0) v.fail("no scenarios found");
  if (v.ok) v.detail = std::to_string(n) + " scenarios";
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"secured calls are transparent", secure_transparency},
      {"frame accounting per call kind", frame_accounting},
      {"recovery ordering under both schemes", recovery_order},
      {"fault propagation and transparent resend", propagation_and_resend},
      {"replayed frames rejected", replay},
      {"marshalling round trips and fixtures", marshalling},
      {"segmentation and reassembly", segmentation},
      {"relocation", relocation},
      {"command-line end to end", cli_end_to_end},
      {"deterministic traces", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.fail(std::string("exception: ") + e.what());
    }
    failed += !v.ok;
    std::cout << (v.ok ? "PASS" : "FAIL") << " AC" << (i + 1) << " " << criteria[i].first << " -- " << v.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
