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

#include "chrpc/binding.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace chrpc {

const TemplateEntry* ChannelTemplate::find(const std::string& handler) const {
  for (const auto& e : entries) {
    if (e.handler == handler) return &e;
  }
  return nullptr;
}

std::string ChannelTemplate::to_text() const {
  std::string out;
  if (!config.empty()) {
    out += "config";
    for (const auto& [k, v] : config) out += " " + k + "=" + v;
    out += "\n";
  }
  for (const auto& e : entries) {
    out += e.layer == Layer::kCall ? "call " : "stream ";
    out += e.handler;
    out += e.required ? " required" : " optional";
    for (const auto& [k, v] : e.params) out += " " + k + "=" + v;
    out += "\n";
  }
  return out;
}

ChannelTemplate parse_template(std::istream& in) {
  ChannelTemplate tpl;
  std::string line;
  int lineno = 0;
  bool seen_stream = false;
  std::set<std::string> names;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream words(line);
    std::string layer, handler, req;
    if (!(words >> layer)) continue;
    if (layer == "config") {
      std::string kv;
      while (words >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw TemplateParseError(lineno, "expected key=value, got '" + kv + "'");
        tpl.config[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      continue;
    }
    if (!(words >> handler >> req)) throw TemplateParseError(lineno, "expected: layer handler required|optional");
    TemplateEntry e;
    if (layer == "call") {
      if (seen_stream) throw TemplateParseError(lineno, "call entry after a stream entry");
      e.layer = Layer::kCall;
    } else if (layer == "stream") {
      seen_stream = true;
      e.layer = Layer::kStream;
    } else {
      throw TemplateParseError(lineno, "unknown layer '" + layer + "'");
    }
    if (req == "required") e.required = true;
    else if (req == "optional") e.required = false;
    else throw TemplateParseError(lineno, "expected required|optional, got '" + req + "'");
    e.handler = handler;
    if (!names.insert(handler).second) throw TemplateParseError(lineno, "duplicate handler '" + handler + "'");
    std::string kv;
    while (words >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw TemplateParseError(lineno, "expected key=value, got '" + kv + "'");
      e.params[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    tpl.entries.push_back(std::move(e));
  }
  return tpl;
}

ChannelTemplate parse_template_text(const std::string& text) {
  std::istringstream in(text);
  return parse_template(in);
}

ChannelTemplate parse_template_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template " + path);
  return parse_template(in);
}

ChannelTemplate negotiate(const ChannelTemplate& client, const ChannelTemplate& server,
                          const HandlerCatalog& catalog) {
  ChannelTemplate out;
  out.config = client.config;
  for (const auto& [k, v] : server.config) out.config[k] = v;
  std::vector<std::string> unmet;
  auto needs_peer = [&](const std::string& name) {
    auto* c = catalog.find(name);
    return !c || c->needs_counterpart;
  };
  auto merge = [](const TemplateEntry& c, const TemplateEntry& s) {
    TemplateEntry e = s;
    e.params = c.params;
    for (const auto& [k, v] : s.params) e.params[k] = v;
    return e;
  };
  for (Layer layer : {Layer::kCall, Layer::kStream}) {
    for (const auto& s : server.entries) {
      if (s.layer != layer) continue;
      if (const auto* c = client.find(s.handler)) {
        out.entries.push_back(merge(*c, s));
      } else if (s.required) {
        unmet.push_back(s.handler);
      }
    }
    for (const auto& c : client.entries) {
      if (c.layer != layer || server.find(c.handler)) continue;
      if (!needs_peer(c.handler)) out.entries.push_back(c);
    }
  }
  if (!unmet.empty()) {
    std::string detail = "NegotiationFailed: client lacks required";
    for (const auto& u : unmet) detail += " " + u;
    raise(FaultKind::kChannel, Phase::kRequest, "negotiate", detail);
  }
  return out;
}

TaggedValue RegistryRecord::encode() const {
  return TaggedValue::List{name, address.to_string(), tpl.to_text(), epoch};
}

RegistryRecord RegistryRecord::decode(const TaggedValue& v) {
  const auto& l = v.as_list();
  if (l.size() != 4) throw std::invalid_argument("registry record needs 4 fields");
  RegistryRecord r;
  r.name = l[0].as_text();
  r.address = Address::parse(l[1].as_text());
  r.tpl = parse_template_text(l[2].as_text());
  r.epoch = l[3].as_int();
  return r;
}

std::int64_t Registry::rebind(const std::string& name, const Address& address,
                              const ChannelTemplate& tpl) {
  std::lock_guard lk(mu_);
  auto& rec = records_[name];
  rec.name = name;
  rec.address = address;
  rec.tpl = tpl;
  return ++rec.epoch;
}

std::optional<RegistryRecord> Registry::lookup(const std::string& name) const {
  std::lock_guard lk(mu_);
  auto it = records_.find(name);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void RelocationManager::notify(const std::string& name, const Address& address) {
  std::lock_guard lk(mu_);
  where_[name] = address;
}

std::optional<Address> RelocationManager::query(const std::string& name) const {
  std::lock_guard lk(mu_);
  auto it = where_.find(name);
  if (it == where_.end()) return std::nullopt;
  return it->second;
}

namespace {

Message plain_call(const Address& to, std::string method, std::vector<TaggedValue> params) {
  Message m;
  m.target = to;
  m.return_address = Address::loopback("client");
  m.method = std::move(method);
  m.params = std::move(params);
  return m;
}

bool not_found(const Reply& r) {
  return !r.ok() && r.fault().kind == FaultKind::kApplication &&
         r.fault().detail.rfind(naming::kNotFound, 0) == 0;
}

[[noreturn]] void rethrow(const Reply& r) { throw FaultError(r.fault()); }

}  // namespace

std::int64_t registry_rebind(OutOfBand& via, const Address& registry, const RegistryRecord& rec) {
  auto r = via.call(registry, plain_call(registry, naming::kRebind, {rec.encode()}), false);
  if (!r.ok()) rethrow(r);
  return r.result().as_int();
}

std::optional<RegistryRecord> registry_lookup(OutOfBand& via, const Address& registry,
                                              const std::string& name) {
  auto r = via.call(registry, plain_call(registry, naming::kLookup, {name}), false);
  if (not_found(r)) return std::nullopt;
  if (!r.ok()) rethrow(r);
  return RegistryRecord::decode(r.result());
}

void relocation_notify(OutOfBand& via, const Address& manager, const std::string& name,
                       const Address& address) {
  auto r = via.call(manager, plain_call(manager, naming::kNotify, {name, address.to_string()}), false);
  if (!r.ok()) rethrow(r);
}

std::optional<Address> relocation_query(OutOfBand& via, const Address& manager,
                                        const std::string& name) {
  auto r = via.call(manager, plain_call(manager, naming::kQuery, {name}), false);
  if (not_found(r)) return std::nullopt;
  if (!r.ok()) rethrow(r);
  return Address::parse(r.result().as_text());
}

Relocator::Relocator(Params params) : Handler("Relocator"), params_(std::move(params)) {}

HandlerOutcome Relocator::clear(const Message& m, const Fault& f, CallContext& ctx) {
  if (f.kind != FaultKind::kTransport) return HandlerOutcome::unclearable("not a transport fault");
  auto mgr = params_.find("manager");
  if (mgr == params_.end() || !ctx.out_of_band) return HandlerOutcome::unclearable("no relocation manager");
  auto svc = params_.find("service");
  std::string name = svc != params_.end() ? svc->second : m.target.object;
  try {
    auto where = relocation_query(*ctx.out_of_band, Address::parse(mgr->second), name);
    if (!where) return HandlerOutcome::unclearable("manager does not know " + name);
    return HandlerOutcome::rebind(retarget(m, m.target, *where), "relocated to " + where->to_string());
  } catch (const FaultError& e) {
    return HandlerOutcome::unclearable("manager unreachable: " + e.fault().detail);
  } catch (const std::exception& e) {
    return HandlerOutcome::unclearable(std::string("manager reply unusable: ") + e.what());
  }
}

HandlerOutcome Relocator::undo(const Message& m, const Fault& f, CallContext& ctx) {
  auto out = clear(m, f, ctx);
  if (!out.has_message() && out.control().kind == Control::kRebind) return out;
  return Handler::undo(m, f, ctx);
}

void register_relocator(HandlerCatalog& catalog) {
  catalog.add("Relocator", CatalogEntry{Layer::kCall, false, [](const std::string&, const Params& p, HandlerEnv&) {
                                           HandlerSet set("Relocator", Layer::kCall);
                                           set.deploy(Phase::kRequest, std::make_shared<Relocator>(p));
                                           return set;
                                         }});
}

}  // namespace chrpc
