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

#include "chrpc/handler.hpp"

namespace chrpc {

void CallState::sweep_locked(Clock::time_point now) {
  for (auto it = slots_.begin(); it != slots_.end();) {
    if (now - it->second.touched > ttl_) it = slots_.erase(it);
    else ++it;
  }
}

void CallState::put(const CallId& call, const std::string& key, TaggedValue v) {
  std::lock_guard lk(mu_);
  auto now = Clock::now();
  sweep_locked(now);
  auto& slot = slots_[call];
  slot.touched = now;
  slot.entries.insert_or_assign(key, std::move(v));
}

std::optional<TaggedValue> CallState::get(const CallId& call, const std::string& key) const {
  std::lock_guard lk(mu_);
  auto it = slots_.find(call);
  if (it == slots_.end()) return std::nullopt;
  auto e = it->second.entries.find(key);
  if (e == it->second.entries.end()) return std::nullopt;
  return e->second;
}

void CallState::remove(const CallId& call, const std::string& key) {
  std::lock_guard lk(mu_);
  auto it = slots_.find(call);
  if (it != slots_.end()) it->second.entries.erase(key);
}

void CallState::put_original(const CallId& call, Message m) {
  std::lock_guard lk(mu_);
  auto now = Clock::now();
  sweep_locked(now);
  auto& slot = slots_[call];
  slot.touched = now;
  slot.original = std::move(m);
}

std::optional<Message> CallState::original(const CallId& call) const {
  std::lock_guard lk(mu_);
  auto it = slots_.find(call);
  if (it == slots_.end()) return std::nullopt;
  return it->second.original;
}

void CallState::remove_all(const CallId& call) {
  std::lock_guard lk(mu_);
  slots_.erase(call);
}

std::size_t CallState::entry_count(const CallId& call) const {
  std::lock_guard lk(mu_);
  auto it = slots_.find(call);
  if (it == slots_.end()) return 0;
  return it->second.entries.size() + (it->second.original ? 1 : 0);
}

std::size_t CallState::call_count() const {
  std::lock_guard lk(mu_);
  return slots_.size();
}

void CallState::sweep() {
  std::lock_guard lk(mu_);
  sweep_locked(Clock::now());
}

void Session::put(const std::string& key, TaggedValue v) {
  std::lock_guard lk(mu_);
  values_.insert_or_assign(key, std::move(v));
}

std::optional<TaggedValue> Session::get(const std::string& key) const {
  std::lock_guard lk(mu_);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void Session::erase(const std::string& key) {
  std::lock_guard lk(mu_);
  values_.erase(key);
}

void Session::clear() {
  std::lock_guard lk(mu_);
  values_.clear();
}

const char* control_name(Control c) {
  switch (c) {
    case Control::kCleared: return "cleared";
    case Control::kUnclearable: return "unclearable";
    case Control::kRebind: return "rebind";
  }
  return "?";
}

HandlerOutcome Handler::todo(const Message& m, CallContext&) { return HandlerOutcome::next(m); }

HandlerOutcome Handler::clear(const Message&, const Fault&, CallContext&) {
  return HandlerOutcome::unclearable();
}

HandlerOutcome Handler::undo(const Message& m, const Fault&, CallContext& ctx) {
  if (auto prior = recall_input(ctx)) return HandlerOutcome::next(*prior);
  return HandlerOutcome::next(m);
}

HandlerOutcome Handler::redo(const Message& m, CallContext& ctx) { return todo(m, ctx); }

void Handler::remember_input(CallContext& ctx, const Message& m) const {
  ctx.state.put(ctx.call_id, name_ + "#in", TaggedValue(m));
}

std::optional<Message> Handler::recall_input(const CallContext& ctx) const {
  auto v = ctx.state.get(ctx.call_id, name_ + "#in");
  if (!v || v->tag() != ValueTag::kMessage) return std::nullopt;
  return v->as_message();
}

void Handler::fail(const CallContext& ctx, std::string detail) const {
  raise(FaultKind::kChannel, ctx.phase, name_, std::move(detail));
}

HandlerSet& HandlerSet::deploy(Phase p, std::shared_ptr<Handler> h) {
  call_[index(p)] = std::move(h);
  return *this;
}

HandlerSet& HandlerSet::deploy(Phase p, std::shared_ptr<StreamHandler> h) {
  stream_[index(p)] = std::move(h);
  return *this;
}

bool HandlerSet::populated() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (call_[i] || stream_[i]) return true;
  }
  return false;
}

void HandlerCatalog::add(std::string name, CatalogEntry entry) {
  entries_.insert_or_assign(std::move(name), std::move(entry));
}

const CatalogEntry* HandlerCatalog::find(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    auto dot = name.find('.');
    if (dot != std::string::npos) it = entries_.find(name.substr(0, dot));
  }
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> HandlerCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

}  // namespace chrpc
