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

// channelrpc: daemons, a one-shot client and the scenario runner.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "chrpc/binding.hpp"
#include "chrpc/demo.hpp"
#include "chrpc/engine.hpp"
#include "chrpc/scenario.hpp"

using namespace chrpc;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// flag > CHANNELRPC_TEMPLATE > identity
ChannelTemplate pick_template(const std::string& flag) {
  if (!flag.empty()) return flag == "none" ? ChannelTemplate{} : parse_template_file(flag);
  if (const char* env = std::getenv("CHANNELRPC_TEMPLATE"); env && *env) return parse_template_file(env);
  return {};
}

std::optional<std::uint64_t> pick_seed(const std::string& flag) {
  if (!flag.empty()) return std::stoull(flag);
  return seed_from_env();
}

// Listens on `at` (tcp or udp) until SIGINT/SIGTERM. Port 0 picks a free one;
// the resolved address goes to `ready_file` when given.
int run_daemon(Engine& engine, Address at, ChannelTemplate tpl, ServiceTable services, const std::string& name,
               const std::string& registry, const std::string& relocmgr, const std::string& ready_file) {
  Acceptor acc(engine, tpl, std::move(services));
  std::unique_ptr<TcpListener> tcp;
  std::unique_ptr<UdpListener> udp;
  switch (at.transport) {
    case TransportKind::kTcp:
      tcp = std::make_unique<TcpListener>(at.host, at.port, acc.frame_handler());
      at.port = tcp->port();
      break;
    case TransportKind::kUdp:
      udp = std::make_unique<UdpListener>(at.host, at.port, acc.frame_handler());
      at.port = udp->port();
      break;
    case TransportKind::kLoopback:
      std::cerr << "loopback addresses only exist inside one process; use tcp:// or udp://\n";
      return 2;
  }
  if (!registry.empty()) registry_rebind(engine, Address::parse(registry), RegistryRecord{name, at, tpl, 0});
  if (!relocmgr.empty()) relocation_notify(engine, Address::parse(relocmgr), name, at);
  if (!ready_file.empty()) {
    std::ofstream(ready_file) << at.to_string() << "\n";
  }
  std::cerr << "serving " << name << " at " << at.to_string() << "\n";
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"channelrpc: four-phase RPC with pluggable channel objects"};
  app.require_subcommand(1);

  std::string name = "AnswererServer", tpl_file, listen, registry, relocmgr, ready_file, seed;
  auto* serve = app.add_subcommand("serve", "serve the Answerer object");
  serve->add_option("--name", name, "registered name");
  serve->add_option("--template", tpl_file, "channel template file (or 'none')");
  serve->add_option("--listen", listen, "tcp://host:port/object or udp://...")->required();
  serve->add_option("--registry", registry, "registry address to register with");
  serve->add_option("--relocmgr", relocmgr, "relocation manager to notify");
  serve->add_option("--ready-file", ready_file, "write the bound address here once listening");

  auto* reg = app.add_subcommand("registry", "run the naming registry");
  reg->add_option("--listen", listen, "address")->required();
  reg->add_option("--ready-file", ready_file, "write the bound address here once listening");

  auto* mgr = app.add_subcommand("relocmgr", "run the relocation manager");
  mgr->add_option("--listen", listen, "address")->required();
  mgr->add_option("--ready-file", ready_file, "write the bound address here once listening");

  std::string method = "answer", address;
  std::vector<std::string> args;
  auto* call = app.add_subcommand("call", "make one call and print the result");
  call->add_option("--name", name, "name to look up in the registry");
  call->add_option("--address", address, "server address; skips the registry");
  call->add_option("--registry", registry, "registry address");
  call->add_option("--method", method, "method name");
  call->add_option("--arg", args, "text argument (repeatable)");
  call->add_option("--template", tpl_file, "client channel template (or 'none')");

  std::string script, trace_out;
  auto* scen = app.add_subcommand("scenario", "run a scenario script and print its trace");
  scen->add_option("script", script, "scenario file")->required();
  scen->add_option("--seed", seed, "deterministic seed (overrides CHANNELRPC_SEED)");
  scen->add_option("--trace-out", trace_out, "write the trace here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scen) {
      auto result = run_scenario(ScenarioScript::parse_file(script), pick_seed(seed));
      if (trace_out.empty()) {
        std::cout << result.trace;
      } else {
        std::ofstream(trace_out) << result.trace;
      }
      for (const auto& c : result.checks) std::cerr << c << "\n";
      return result.passed ? 0 : 1;
    }

    Environment env(pick_seed(seed));
    Engine engine(env);
    if (*serve) {
      return run_daemon(engine, Address::parse(listen), pick_template(tpl_file), answerer_services(), name,
                        registry, relocmgr, ready_file);
    }
    if (*reg) {
      return run_daemon(engine, Address::parse(listen), {}, registry_services(std::make_shared<Registry>()),
                        "Registry", "", "", ready_file);
    }
    if (*mgr) {
      return run_daemon(engine, Address::parse(listen), {},
                        relocation_services(std::make_shared<RelocationManager>()), "RelocationManager", "", "",
                        ready_file);
    }

    // call
    ChannelTemplate client = pick_template(tpl_file);
    Address where;
    ChannelTemplate agreed = client;
    if (!address.empty()) {
      where = Address::parse(address);
    } else {
      if (registry.empty()) {
        std::cerr << "call needs --address or --registry\n";
        return 2;
      }
      auto rec = registry_lookup(engine, Address::parse(registry), name);
      if (!rec) {
        std::cerr << "NotFound: " << name << "\n";
        return 1;
      }
      where = rec->address;
      agreed = negotiate(client, rec->tpl, env.catalog());
    }
    auto b = engine.bind(where, agreed);
    Message m;
    m.target = where;
    m.method = method;
    for (auto& a : args) m.params.emplace_back(a);
    Reply r = engine.initiate(std::move(m), *b);
    if (!r.ok()) {
      std::cerr << r.fault().to_string() << "\n";
      return 1;
    }
    const auto& v = r.result();
    std::cout << (v.tag() == ValueTag::kText ? v.as_text() : v.to_string()) << "\n";
    return 0;
  } catch (const FaultError& e) {
    std::cerr << e.fault().to_string() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
