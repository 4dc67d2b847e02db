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

#include "chrpc/trace.hpp"

#include <sstream>

namespace chrpc {

const char* side_name(Side s) { return s == Side::kInitiator ? "initiator" : "acceptor"; }

std::string TraceEvent::to_line() const {
  std::ostringstream os;
  os << seq << '\t' << time_ms << '\t' << side_name(side) << '\t'
     << (phase ? phase_name(*phase) : "-") << '\t' << (handler.empty() ? "-" : handler) << '\t'
     << event << '\t' << call_id.to_hex() << '\t' << detail;
  return os.str();
}

void Trace::emit(Side side, std::optional<Phase> phase, std::string handler, std::string event,
                 const CallId& id, std::string detail) {
  for (auto& c : detail) {
    if (c == '\t' || c == '\n') c = ' ';
  }
  std::lock_guard lk(mu_);
  TraceEvent e{events_.size() + 1, clock_.now_ms(), side, phase, std::move(handler),
               std::move(event), id, std::move(detail)};
  if (tee_) *tee_ << e.to_line() << '\n';
  events_.push_back(std::move(e));
}

std::vector<TraceEvent> Trace::events() const {
  std::lock_guard lk(mu_);
  return events_;
}

std::string Trace::render() const {
  std::lock_guard lk(mu_);
  std::string out;
  for (const auto& e : events_) out += e.to_line() + "\n";
  return out;
}

void Trace::clear() {
  std::lock_guard lk(mu_);
  events_.clear();
}

void Trace::tee(std::ostream* out) {
  std::lock_guard lk(mu_);
  tee_ = out;
}

UsageLog::UsageLog(std::string path) : path_(std::move(path)) {}

void UsageLog::append(std::int64_t time_ms, Phase phase, const std::string& method,
                      const CallId& id) {
  std::string line = iso8601_ms(time_ms) + "\t" + phase_name(phase) + "\t" + method + "\t" + id.to_hex();
  std::lock_guard lk(mu_);
  if (fail_next_ > 0) {
    --fail_next_;
    raise(FaultKind::kChannel, phase, "UsageLogger", "log write failed");
  }
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    if (!(out << line << '\n')) raise(FaultKind::kChannel, phase, "UsageLogger", "log write failed: " + path_);
  }
  lines_.push_back(std::move(line));
}

std::vector<std::string> UsageLog::lines() const {
  std::lock_guard lk(mu_);
  return lines_;
}

}  // namespace chrpc
