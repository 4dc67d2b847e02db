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

#include "chrpc/demo.hpp"

namespace chrpc {

namespace {

const std::string& text_arg(const std::vector<TaggedValue>& params, std::size_t i, const char* method) {
  if (params.size() <= i || params[i].tag() != ValueTag::kText) {
    raise(FaultKind::kApplication, Phase::kIndication, "", std::string("BadArguments: ") + method);
  }
  return params[i].as_text();
}

[[noreturn]] void not_found(const std::string& name) {
  raise(FaultKind::kApplication, Phase::kIndication, "", std::string(naming::kNotFound) + ": " + name);
}

}  // namespace

ServiceTable answerer_services(std::shared_ptr<AnswererStats> stats) {
  if (!stats) stats = std::make_shared<AnswererStats>();
  ServiceTable t;
  t.add("answer", Signature{true, {}}, [stats](const std::vector<TaggedValue>& p) -> TaggedValue {
    ++stats->answered;
    return "You said:" + text_arg(p, 0, "answer");
  });
  t.add("echo", Signature{true, {}}, [](const std::vector<TaggedValue>& p) -> TaggedValue {
    return TaggedValue::List(p.begin(), p.end());
  });
  t.add("tell", Signature{false, {}}, [stats](const std::vector<TaggedValue>& p) -> TaggedValue {
    const auto& s = text_arg(p, 0, "tell");
    ++stats->told;
    std::lock_guard lk(stats->mu);
    stats->heard.push_back(s);
    return TaggedValue();
  });
  return t;
}

ServiceTable registry_services(std::shared_ptr<Registry> registry) {
  ServiceTable t;
  t.add(naming::kRebind, Signature{true, {}}, [registry](const std::vector<TaggedValue>& p) -> TaggedValue {
    if (p.size() != 1) raise(FaultKind::kApplication, Phase::kIndication, "", "BadArguments: rebind");
    auto rec = RegistryRecord::decode(p[0]);
    return registry->rebind(rec.name, rec.address, rec.tpl);
  });
  t.add(naming::kLookup, Signature{true, {naming::kNotFound}},
        [registry](const std::vector<TaggedValue>& p) -> TaggedValue {
          const auto& name = text_arg(p, 0, "lookup");
          auto rec = registry->lookup(name);
          if (!rec) not_found(name);
          return rec->encode();
        });
  return t;
}

ServiceTable relocation_services(std::shared_ptr<RelocationManager> manager) {
  ServiceTable t;
  t.add(naming::kNotify, Signature{true, {}}, [manager](const std::vector<TaggedValue>& p) -> TaggedValue {
    manager->notify(text_arg(p, 0, "notify"), Address::parse(text_arg(p, 1, "notify")));
    return TaggedValue();
  });
  t.add(naming::kQuery, Signature{true, {naming::kNotFound}},
        [manager](const std::vector<TaggedValue>& p) -> TaggedValue {
          const auto& name = text_arg(p, 0, "query");
          auto where = manager->query(name);
          if (!where) not_found(name);
          return where->to_string();
        });
  return t;
}

}  // namespace chrpc
