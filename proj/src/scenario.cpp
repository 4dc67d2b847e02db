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

#include "chrpc/scenario.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <cstring>
#include <memory>
#include <regex>
#include <set>
#include <sstream>

#include "chrpc/binding.hpp"
#include "chrpc/demo.hpp"
#include "chrpc/engine.hpp"
#include "chrpc/marshal.hpp"

namespace chrpc {

namespace {

// directive -> minimum argument count
const std::map<std::string, std::size_t> kDirectives = {
    {"start-daemon", 1},    {"client-template", 2}, {"call", 3},         {"inject-fault", 1},
    {"relocate-server", 2}, {"capture-frame", 2},   {"resend-frame", 2}, {"expect", 2}};
const std::set<std::string> kChecks = {"ok", "fault", "trace", "no-trace"};

// Directives whose first argument introduces a label.
bool defines_label(const std::string& d) {
  return d == "call" || d == "capture-frame" || d == "resend-frame";
}

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

// `*` matches within one trace line; everything else is literal.
std::regex glob(const std::string& pattern) {
  std::string re;
  for (char c : pattern) {
    if (c == '*') {
      re += "[^\\n]*";
    } else {
      if (std::strchr("\\^$.|?+()[]{}", c)) re += '\\';
      re += c;
    }
  }
  return std::regex(re);
}

std::string join(const std::vector<std::string>& v, std::size_t from) {
  std::string out;
  for (std::size_t i = from; i < v.size(); ++i) {
    if (i > from) out += ' ';
    out += v[i];
  }
  return out;
}

}  // namespace

ScenarioScript ScenarioScript::parse(std::istream& in, std::string base_dir) {
  ScenarioScript s;
  s.base_dir = std::move(base_dir);
  std::set<std::string> labels{"*"};
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    ScenarioStep step;
    step.line = n;
    if (!(ls >> step.directive)) continue;
    std::string tok;
    while (ls >> std::quoted(tok)) step.args.push_back(tok);
    auto d = kDirectives.find(step.directive);
    if (d == kDirectives.end()) throw ScenarioError(n, "unknown directive " + step.directive);
    if (step.args.size() < d->second) throw ScenarioError(n, step.directive + ": missing arguments");
    if (defines_label(step.directive)) {
      if (step.args.empty()) throw ScenarioError(n, step.directive + " needs a label");
      if (!labels.insert(step.args[0]).second) throw ScenarioError(n, "duplicate label " + step.args[0]);
    }
    if (step.directive == "expect") {
      if (step.args.size() < 2) throw ScenarioError(n, "expect needs a label and a check");
      if (!labels.count(step.args[0])) throw ScenarioError(n, "expect refers to unknown label " + step.args[0]);
      if (!kChecks.count(step.args[1])) throw ScenarioError(n, "unknown check " + step.args[1]);
    }
    if (step.directive == "resend-frame" && (step.args.size() != 2 || !labels.count(step.args[1]))) {
      throw ScenarioError(n, "resend-frame needs a label and an earlier capture label");
    }
    s.steps.push_back(std::move(step));
  }
  return s;
}

ScenarioScript ScenarioScript::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path);
  auto dir = std::filesystem::path(path).parent_path().string();
  return parse(in, dir.empty() ? "." : dir);
}

namespace {

struct Outcome {
  bool ok = false;
  std::string value;
  std::string fault;
  std::size_t from = 0, to = 0;  // trace slice
  Bytes frame;                   // capture-frame only
  std::string object;
};

class Runner {
 public:
  Runner(const ScenarioScript& s, std::optional<std::uint64_t> seed) : script_(s), env_(seed), engine_(env_) {}

  ScenarioResult run() {
    ScenarioResult r;
    for (const auto& st : script_.steps) {
      try {
        step(st, r);
      } catch (const ScenarioError&) {
        throw;
      } catch (const std::exception& e) {
        throw ScenarioError(st.line, e.what());
      }
    }
    r.trace = env_.trace().render();
    return r;
  }

 private:
  ChannelTemplate load(const std::string& ref) {
    if (ref == "none") return {};
    auto p = std::filesystem::path(ref);
    if (p.is_relative()) p = std::filesystem::path(script_.base_dir) / p;
    return parse_template_file(p.string());
  }

  static Params options(const std::vector<std::string>& args, std::size_t from) {
    Params p;
    for (std::size_t i = from; i < args.size(); ++i) {
      auto eq = args[i].find('=');
      if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got " + args[i]);
      p[args[i].substr(0, eq)] = args[i].substr(eq + 1);
    }
    return p;
  }

  LoopbackNetwork& net() { return env_.network().loopback(); }

  void step(const ScenarioStep& st, ScenarioResult& res) {
    const auto& a = st.args;
    auto need = [&](std::size_t n) {
      if (a.size() < n) throw ScenarioError(st.line, st.directive + ": missing arguments");
    };
    const auto& d = st.directive;
    if (d == "start-daemon") {
      need(1);
      start_daemon(st);
    } else if (d == "client-template") {
      need(2);
      client_tpl_[a[0]] = load(a[1]);
    } else if (d == "call") {
      need(3);
      call(st);
    } else if (d == "inject-fault") {
      need(1);
      inject(st);
    } else if (d == "relocate-server") {
      need(2);
      relocate(a[0], a[1]);
    } else if (d == "capture-frame") {
      need(2);
      capture(st);
    } else if (d == "resend-frame") {
      resend(st);
    } else if (d == "expect") {
      check(st, res);
    }
  }

  void start_daemon(const ScenarioStep& st) {
    const auto& a = st.args;
    const auto& kind = a[0];
    if (kind == "registry") {
      registry_ = std::make_shared<Registry>();
      serve(kRegistryObject, {}, registry_services(registry_));
      registry_addr_ = Address::loopback(kRegistryObject);
    } else if (kind == "relocmgr") {
      manager_ = std::make_shared<RelocationManager>();
      serve(kManagerObject, {}, relocation_services(manager_));
      manager_addr_ = Address::loopback(kManagerObject);
    } else if (kind == "answerer") {
      if (a.size() < 2) throw ScenarioError(st.line, "start-daemon answerer needs a name");
      auto opts = options(a, 2);
      ChannelTemplate tpl = opts.count("template") ? load(opts["template"]) : ChannelTemplate{};
      serve(a[1], tpl, answerer_services());
      object_[a[1]] = a[1];
      announce(a[1], tpl);
    } else {
      throw ScenarioError(st.line, "unknown daemon " + kind);
    }
  }

  void serve(const std::string& object, ChannelTemplate tpl, ServiceTable services) {
    auto acc = std::make_unique<Acceptor>(engine_, std::move(tpl), std::move(services));
    net().listen(object, acc->frame_handler());
    acceptors_[object] = std::move(acc);
  }

  // Server side of start-up and moves: register with the naming daemons.
  void announce(const std::string& name, const ChannelTemplate& tpl) {
    auto where = Address::loopback(object_[name]);
    if (registry_) registry_rebind(engine_, registry_addr_, RegistryRecord{name, where, tpl, 0});
    if (manager_) relocation_notify(engine_, manager_addr_, name, where);
  }

  Binding& binding_for(const std::string& name) {
    if (auto it = bindings_.find(name); it != bindings_.end()) return *it->second;
    Address where = Address::loopback(name);
    ChannelTemplate server;
    if (registry_) {
      auto rec = registry_lookup(engine_, registry_addr_, name);
      if (!rec) raise(FaultKind::kApplication, Phase::kRequest, "", "NotFound: " + name);
      where = rec->address;
      server = rec->tpl;
    } else if (auto it = acceptors_.find(name); it != acceptors_.end()) {
      server = it->second->tpl();
    }
    auto ct = client_tpl_.find(name);
    ChannelTemplate agreed = ct == client_tpl_.end() ? server : negotiate(ct->second, server, env_.catalog());
    auto b = engine_.bind(where, agreed);
    bindings_[name] = b;
    return *b;
  }

  void call(const ScenarioStep& st) {
    const auto& a = st.args;
    Outcome o;
    o.from = env_.trace().events().size();
    Reply r;
    try {
      Binding& b = binding_for(a[1]);
      Message m;
      m.target = b.peer;
      m.return_address = Address::loopback("ScenarioClient");
      m.method = a[2];
      for (std::size_t i = 3; i < a.size(); ++i) {
        if (starts_with(a[i], "i:")) {
          m.params.emplace_back(static_cast<std::int64_t>(std::stoll(a[i].substr(2))));
        } else {
          m.params.emplace_back(a[i]);
        }
      }
      r = engine_.initiate(std::move(m), b);
    } catch (const FaultError& e) {
      r.outcome = e.fault();
    }
    o.ok = r.ok();
    if (o.ok) {
      o.value = r.result().tag() == ValueTag::kText ? r.result().as_text() : r.result().to_string();
    } else {
      o.fault = r.fault().to_string();
    }
    o.to = env_.trace().events().size();
    outcomes_[a[0]] = std::move(o);
  }

  void inject(const ScenarioStep& st) {
    const auto& a = st.args;
    auto num = [&](std::size_t i, std::int64_t dflt) -> std::int64_t {
      return i < a.size() ? std::stoll(a[i]) : dflt;
    };
    if (a[0] == "drop-next") {
      net().drop_nth(net().frames_seen() + static_cast<std::uint64_t>(num(1, 1)));
    } else if (a[0] == "corrupt-next") {
      net().corrupt_byte(net().frames_seen() + static_cast<std::uint64_t>(num(1, 1)),
                         static_cast<std::size_t>(num(2, 0)));
    } else if (a[0] == "fail-connects") {
      net().fail_connects(static_cast<int>(num(1, 1)));
    } else if (a[0] == "usage-log-fail") {
      env_.usage_log().fail_next(static_cast<int>(num(1, 1)));
    } else if (a[0] == "clear") {
      net().clear_faults();
    } else {
      throw ScenarioError(st.line, "unknown fault " + a[0]);
    }
  }

  void relocate(const std::string& name, const std::string& to) {
    auto it = object_.find(name);
    if (it == object_.end()) throw std::invalid_argument("no server named " + name);
    auto acc = std::move(acceptors_.at(it->second));
    net().unlisten(it->second);
    acceptors_.erase(it->second);
    net().listen(to, acc->frame_handler());
    acceptors_[to] = std::move(acc);
    it->second = to;
    announce(name, acceptors_[to]->tpl());
  }

  void capture(const ScenarioStep& st) {
    const auto& a = st.args;
    auto it = object_.find(a[1]);
    std::string object = it == object_.end() ? a[1] : it->second;
    Outcome o;
    o.object = object;
    for (const auto& c : net().captured()) {
      if (c.reply || c.object != object) continue;
      if (looks_like_frame(c.frame)) {
        try {
          if (read_header(c.frame).is_control()) continue;
        } catch (const std::exception&) {
        }
      }
      o.frame = c.frame;
    }
    if (o.frame.empty()) throw ScenarioError(st.line, "no request frame captured for " + a[1]);
    o.ok = true;
    o.from = o.to = env_.trace().events().size();
    outcomes_[a[0]] = std::move(o);
  }

  void resend(const ScenarioStep& st) {
    const auto& cap = outcomes_.at(st.args[1]);
    Outcome o;
    o.from = env_.trace().events().size();
    net().inject(cap.object, cap.frame);
    auto events = env_.trace().events();
    o.to = events.size();
    o.fault = "no reply";
    for (std::size_t i = o.from; i < o.to; ++i) {
      const auto& e = events[i];
      if (e.side != Side::kAcceptor) continue;
      if (e.event == "propagate") {
        o.ok = false;
        o.fault = e.detail;
        break;
      }
      if (e.event == "dispatch") {
        o.ok = true;
        o.fault.clear();
        o.value = e.detail;
      }
    }
    outcomes_[st.args[0]] = std::move(o);
  }

  void check(const ScenarioStep& st, ScenarioResult& res) {
    const auto& a = st.args;
    const auto& what = a[1];
    std::string arg = join(a, 2);
    bool pass = false;
    std::string slice;
    auto events = env_.trace().events();
    std::size_t from = 0, to = events.size();
    const Outcome* o = nullptr;
    if (a[0] != "*") {
      o = &outcomes_.at(a[0]);
      from = o->from;
      to = o->to;
    }
    for (std::size_t i = from; i < to; ++i) slice += events[i].to_line() + "\n";
    // Fields are tab-separated; scripts write them with spaces.
    std::replace(slice.begin(), slice.end(), '\t', ' ');
    std::replace(arg.begin(), arg.end(), '\t', ' ');

    if (what == "ok") {
      pass = o && o->ok && (arg.empty() || o->value == arg);
    } else if (what == "fault") {
      pass = o && !o->ok && o->fault.find(arg) != std::string::npos;
    } else if (what == "trace") {
      pass = std::regex_search(slice, glob(arg));
    } else if (what == "no-trace") {
      pass = !std::regex_search(slice, glob(arg));
    } else {
      throw ScenarioError(st.line, "unknown expectation " + what);
    }
    std::string line = std::string(pass ? "PASS" : "FAIL") + " line " + std::to_string(st.line) + ": expect " +
                       join(a, 0);
    if (!pass && o) line += o->ok ? "  (got ok: " + o->value + ")" : "  (got fault: " + o->fault + ")";
    res.checks.push_back(line);
    res.passed = res.passed && pass;
  }

  static constexpr const char* kRegistryObject = "Registry";
  static constexpr const char* kManagerObject = "RelocationManager";

  const ScenarioScript& script_;
  Environment env_;
  Engine engine_;
  std::shared_ptr<Registry> registry_;
  std::shared_ptr<RelocationManager> manager_;
  Address registry_addr_, manager_addr_;
  std::map<std::string, std::unique_ptr<Acceptor>> acceptors_;  // by object
  std::map<std::string, std::string> object_;                   // server name -> current object
  std::map<std::string, ChannelTemplate> client_tpl_;
  std::map<std::string, std::shared_ptr<Binding>> bindings_;
  std::map<std::string, Outcome> outcomes_;
};

}  // namespace

ScenarioResult run_scenario(const ScenarioScript& script, std::optional<std::uint64_t> seed) {
  return Runner(script, seed).run();
}

}  // namespace chrpc
