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

// Script-driven harness over the loopback network. One directive per line:
//
//   start-daemon registry | relocmgr
//   start-daemon answerer <Name> [template=<file>|none]
//   client-template <Name> <file>|none
//   call <label> <Name> <method> [arg ...]        args are text; i:<n> is an integer
//   inject-fault drop-next [k] | corrupt-next <k> <byte> | fail-connects <n> | usage-log-fail <n> | clear
//   relocate-server <Name> <NewObject>
//   capture-frame <label> <Name>                   last request frame sent to the server
//   resend-frame <label> <capture-label>
//   expect <label> ok [value] | fault [text] | trace <text> | no-trace <text>
//
// Template paths are relative to the script. The label `*` in an expect
// refers to the whole trace so far.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chrpc {

struct ScenarioStep {
  int line = 0;
  std::string directive;
  std::vector<std::string> args;
};

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what) {}
};

struct ScenarioScript {
  std::vector<ScenarioStep> steps;
  std::string base_dir;

  static ScenarioScript parse(std::istream& in, std::string base_dir = ".");
  static ScenarioScript parse_file(const std::string& path);
};

struct ScenarioResult {
  bool passed = true;
  std::vector<std::string> checks;  // one "PASS ..." / "FAIL ..." line per expect
  std::string trace;
};

ScenarioResult run_scenario(const ScenarioScript& script, std::optional<std::uint64_t> seed);

}  // namespace chrpc
