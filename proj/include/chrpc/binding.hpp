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

#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chrpc/handler.hpp"
#include "chrpc/message.hpp"

namespace chrpc {

struct TemplateEntry {
  std::string handler;
  Layer layer = Layer::kCall;
  bool required = true;
  Params params;

  friend bool operator==(const TemplateEntry&, const TemplateEntry&) = default;
};

// Ordered stack specification; call-layer entries precede stream-layer ones.
struct ChannelTemplate {
  std::vector<TemplateEntry> entries;
  // Engine settings from `config key=value ...` lines.
  Params config;

  const TemplateEntry* find(const std::string& handler) const;
  bool empty() const { return entries.empty(); }
  // Same line format parse_template reads.
  std::string to_text() const;

  friend bool operator==(const ChannelTemplate&, const ChannelTemplate&) = default;
};

class TemplateParseError : public std::runtime_error {
 public:
  TemplateParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Format, one entry per line:  <call|stream> <handler> <required|optional> [key=value ...]
// plus optional `config key=value ...` lines for engine settings.
// '#' starts a comment. File order is stack order.
ChannelTemplate parse_template(std::istream& in);
ChannelTemplate parse_template_text(const std::string& text);
ChannelTemplate parse_template_file(const std::string& path);

// Builds the stack both sides can run. Server entries keep server order;
// client-only entries that work without a peer counterpart are kept too.
// Params merge with server values winning. Throws
// FaultError(channel, "negotiate", "NegotiationFailed: ...").
ChannelTemplate negotiate(const ChannelTemplate& client, const ChannelTemplate& server,
                          const HandlerCatalog& catalog);

struct RegistryRecord {
  std::string name;
  Address address;
  ChannelTemplate tpl;
  std::int64_t epoch = 0;

  TaggedValue encode() const;
  static RegistryRecord decode(const TaggedValue& v);
};

// Naming service state. Epochs increase on every rebind of a name.
class Registry {
 public:
  std::int64_t rebind(const std::string& name, const Address& address, const ChannelTemplate& tpl);
  std::optional<RegistryRecord> lookup(const std::string& name) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, RegistryRecord> records_;
};

// Third party consulted when a server has moved.
class RelocationManager {
 public:
  void notify(const std::string& name, const Address& address);
  std::optional<Address> query(const std::string& name) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Address> where_;
};

// Method names served by the registry and relocation-manager daemons.
namespace naming {
inline constexpr const char* kRebind = "rebind";
inline constexpr const char* kLookup = "lookup";
inline constexpr const char* kNotify = "notify";
inline constexpr const char* kQuery = "query";
inline constexpr const char* kNotFound = "NotFound";
}  // namespace naming

// Client helpers that reach the daemons through a framework call path.
std::int64_t registry_rebind(OutOfBand& via, const Address& registry, const RegistryRecord& rec);
std::optional<RegistryRecord> registry_lookup(OutOfBand& via, const Address& registry,
                                              const std::string& name);
void relocation_notify(OutOfBand& via, const Address& manager, const std::string& name,
                       const Address& address);
std::optional<Address> relocation_query(OutOfBand& via, const Address& manager,
                                        const std::string& name);

// REQUEST-side channel object that, on a transport fault, asks the
// relocation manager where the server went and demands a rebind.
// Params: manager=<address>, service=<registered name> (defaults to the
// target's object name).
class Relocator : public Handler {
 public:
  explicit Relocator(Params params);
  HandlerOutcome clear(const Message& m, const Fault& f, CallContext& ctx) override;
  // Under the clear-while-undoing scheme the relocation attempt happens here.
  HandlerOutcome undo(const Message& m, const Fault& f, CallContext& ctx) override;

 private:
  Params params_;
};

void register_relocator(HandlerCatalog& catalog);

}  // namespace chrpc
