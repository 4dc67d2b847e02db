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

#include <filesystem>
#include <sstream>

#include "chrpc/scenario.hpp"
#include "doctest.h"

using namespace chrpc;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> bundled() {
  std::vector<std::string> out;
  for (auto& e : fs::directory_iterator(CHRPC_SCENARIOS)) {
    if (e.path().extension() == ".scn") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

ScenarioResult run_text(const std::string& text, std::uint64_t seed = 1) {
  std::istringstream in(text);
  return run_scenario(ScenarioScript::parse(in, CHRPC_SCENARIOS), seed);
}

}  // namespace

TEST_SUITE("scenario") {

TEST_CASE("malformed scripts are rejected with a line number") {
  auto bad = [](const std::string& text, int line) {
    std::istringstream in(text);
    try {
      ScenarioScript::parse(in);
      FAIL("accepted: " << text);
    } catch (const ScenarioError& e) {
      CHECK(std::string(e.what()).rfind("line " + std::to_string(line), 0) == 0);
    }
  };
  bad("frobnicate\n", 1);
  bad("# ok\ncall c1\n", 2);
  bad("expect nope ok\n", 1);
  bad("call c1 A answer x\ncall c1 A answer y\n", 2);
  bad("start-daemon answerer A\nexpect c1 maybe\n", 2);
}

TEST_CASE("every bundled scenario passes and reruns identically") {
  auto files = bundled();
  REQUIRE(files.size() >= 8);
  for (const auto& f : files) {
    CAPTURE(f);
    auto s = ScenarioScript::parse_file(f);
    auto a = run_scenario(s, 7);
    std::string checks;
    for (auto& c : a.checks) checks += c + "\n";
    INFO(checks);
    CHECK(a.passed);
    CHECK_FALSE(a.checks.empty());
    CHECK(run_scenario(s, 7).trace == a.trace);
  }
}

TEST_CASE("a failing expectation fails the run") {
  auto r = run_text("start-daemon answerer A\ncall c1 A answer hi\nexpect c1 ok \"You said:bye\"\n");
  CHECK_FALSE(r.passed);
  r = run_text("start-daemon answerer A\ncall c1 A answer hi\nexpect c1 ok \"You said:hi\"\nexpect c1 no-trace dispatch\n");
  CHECK_FALSE(r.passed);
  r = run_text("start-daemon answerer A\ncall c1 A answer hi\nexpect c1 ok \"You said:hi\"\nexpect * trace \"dispatch * answer\"\n");
  CHECK(r.passed);
}

TEST_CASE("different seeds give different call ids") {
  const char* text = "start-daemon answerer A\ncall c1 A answer hi\n";
  CHECK(run_text(text, 1).trace != run_text(text, 2).trace);
}

}  // TEST_SUITE
