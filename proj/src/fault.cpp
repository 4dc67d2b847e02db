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

#include "chrpc/fault.hpp"

#include <sstream>

namespace chrpc {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kRequest: return "REQUEST";
    case Phase::kIndication: return "INDICATION";
    case Phase::kResponse: return "RESPONSE";
    case Phase::kConfirmation: return "CONFIRMATION";
  }
  return "?";
}

bool valid_phase_code(std::uint8_t code) { return code >= 1 && code <= 4; }

const char* fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::kApplication: return "application";
    case FaultKind::kChannel: return "channel";
    case FaultKind::kTransport: return "transport";
    case FaultKind::kCleared: return "cleared";
    case FaultKind::kUnclearable: return "unclearable";
    case FaultKind::kRebind: return "rebind";
  }
  return "?";
}

std::size_t Fault::depth() const {
  std::size_t d = 1;
  for (auto c = contained; c; c = c->contained) ++d;
  return d;
}

std::string Fault::to_string() const {
  std::ostringstream os;
  os << "Fault(" << fault_kind_name(kind) << ", " << phase_name(origin);
  if (!handler.empty()) os << ", \"" << handler << '"';
  os << "): " << detail;
  if (contained) os << " <- " << contained->to_string();
  return os.str();
}

bool operator==(const Fault& a, const Fault& b) {
  if (a.kind != b.kind || a.origin != b.origin || a.handler != b.handler || a.detail != b.detail)
    return false;
  if (!a.contained || !b.contained) return !a.contained && !b.contained;
  return *a.contained == *b.contained;
}

Fault make_fault(FaultKind kind, Phase origin, std::string handler, std::string detail) {
  return Fault{kind, origin, std::move(handler), std::move(detail), nullptr};
}

Fault contain(Fault outer, const Fault& inner) {
  outer.contained = std::make_shared<const Fault>(inner);
  return outer;
}

FaultError::FaultError(Fault f) : fault_(std::move(f)), what_(fault_.to_string()) {}

void raise(FaultKind kind, Phase origin, std::string handler, std::string detail) {
  throw FaultError(make_fault(kind, origin, std::move(handler), std::move(detail)));
}

}  // namespace chrpc
