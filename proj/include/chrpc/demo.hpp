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

// Ready-made service tables: the Answerer demo object and the two naming
// daemons (registry, relocation manager), all served through ordinary
// framework calls.

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "chrpc/binding.hpp"
#include "chrpc/engine.hpp"

namespace chrpc {

struct AnswererStats {
  std::atomic<int> answered{0};
  std::atomic<int> told{0};
  std::vector<std::string> heard;  // tell() payloads, in arrival order
  std::mutex mu;
};

// answer(text) -> "You said:" + text
// echo(params...) -> list of the params, unchanged
// tell(text) -> nothing; one-cast by signature
ServiceTable answerer_services(std::shared_ptr<AnswererStats> stats = nullptr);

// rebind(record) -> epoch; lookup(name) -> record | NotFound
ServiceTable registry_services(std::shared_ptr<Registry> registry);
// notify(name, address) ; query(name) -> address text | NotFound
ServiceTable relocation_services(std::shared_ptr<RelocationManager> manager);

}  // namespace chrpc
