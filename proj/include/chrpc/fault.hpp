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

#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <string>

namespace chrpc {

// The four phases of a two-way call. Numeric codes are part of the wire format.
enum class Phase : std::uint8_t {
  kRequest = 1,
  kIndication = 2,
  kResponse = 3,
  kConfirmation = 4,
};

const char* phase_name(Phase p);
bool valid_phase_code(std::uint8_t code);

enum class FaultKind : std::uint8_t {
  kApplication = 0,
  kChannel = 1,
  kTransport = 2,
  kCleared = 3,  // internal control signal, never marshalled
  kUnclearable = 4,
  kRebind = 5,
};

const char* fault_kind_name(FaultKind k);

// Structured error. `contained` nests the fault that led to this one, the
// way a remote exception carries its cause.
struct Fault {
  FaultKind kind = FaultKind::kChannel;
  Phase origin = Phase::kRequest;
  std::string handler;
  std::string detail;
  std::shared_ptr<const Fault> contained;

  std::size_t depth() const;
  std::string to_string() const;

  friend bool operator==(const Fault& a, const Fault& b);
};

Fault make_fault(FaultKind kind, Phase origin, std::string handler, std::string detail);
Fault contain(Fault outer, const Fault& inner);

// Exception carrier for a Fault.
class FaultError : public std::exception {
 public:
  explicit FaultError(Fault f);
  const Fault& fault() const noexcept { return fault_; }
  const char* what() const noexcept override { return what_.c_str(); }

 private:
  Fault fault_;
  std::string what_;
};

[[noreturn]] void raise(FaultKind kind, Phase origin, std::string handler, std::string detail);

}  // namespace chrpc
