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

#include "chrpc/stream.hpp"

#include <stdexcept>

namespace chrpc {

Bytes chain_send(const StreamStack& stack, ByteView data, CallContext& ctx) {
  Bytes cur(data.begin(), data.end());
  for (const auto& h : stack.send_chain) cur = h->apply(cur, ctx);
  return cur;
}

Bytes chain_receive(const StreamStack& stack, ByteView data, CallContext& ctx) {
  Bytes cur(data.begin(), data.end());
  for (auto it = stack.receive_chain.rbegin(); it != stack.receive_chain.rend(); ++it) {
    cur = (*it)->apply(cur, ctx);
  }
  return cur;
}

Bytes encode_fragment(const Fragment& f) {
  Bytes out;
  out.reserve(kFragmentHeaderSize + f.payload.size());
  ByteWriter w(out);
  w.u8(kFragmentMarker);
  w.u64(f.message_id);
  w.u16(f.index);
  w.u16(f.count);
  w.u16(static_cast<std::uint16_t>(f.payload.size()));
  w.raw(f.payload);
  return out;
}

Fragment decode_fragment(ByteView b) {
  auto bad = [](const char* why) {
    raise(FaultKind::kTransport, Phase::kIndication, "segmenter", std::string("bad fragment: ") + why);
  };
  try {
    ByteReader r(b);
    if (r.u8() != kFragmentMarker) bad("marker");
    Fragment f;
    f.message_id = r.u64();
    f.index = r.u16();
    f.count = r.u16();
    auto len = r.u16();
    auto payload = r.raw(len);
    if (!r.done()) bad("trailing bytes");
    if (f.count == 0 || f.index >= f.count) bad("index out of range");
    f.payload.assign(payload.begin(), payload.end());
    return f;
  } catch (const ByteReader::TruncatedInput&) {
    bad("truncated");
  }
  return {};
}

std::vector<Fragment> segment(ByteView data, std::size_t mtu, std::uint64_t message_id) {
  if (mtu <= kFragmentHeaderSize) throw std::invalid_argument("mtu must exceed fragment header size");
  std::size_t chunk = std::min<std::size_t>(mtu - kFragmentHeaderSize, 0xFFFF);
  std::size_t count = data.empty() ? 1 : (data.size() + chunk - 1) / chunk;
  if (count > 0xFFFF) throw std::invalid_argument("too many fragments");
  std::vector<Fragment> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto begin = std::min(data.size(), i * chunk);
    auto end = std::min(data.size(), begin + chunk);
    out.push_back(Fragment{message_id, static_cast<std::uint16_t>(i),
                           static_cast<std::uint16_t>(count),
                           Bytes(data.begin() + begin, data.begin() + end)});
  }
  return out;
}

std::optional<Bytes> reassemble(const std::vector<Fragment>& frags) {
  if (frags.empty()) return std::nullopt;
  Reassembler r;
  auto now = Reassembler::Clock::now();
  for (const auto& f : frags) {
    if (f.message_id != frags.front().message_id) continue;
    if (auto done = r.add(f, now)) return done;
  }
  return std::nullopt;
}

std::optional<Bytes> Reassembler::add(Fragment f, Clock::time_point now) {
  if (f.count == 0 || f.index >= f.count) return std::nullopt;
  std::lock_guard lk(mu_);
  auto [it, fresh] = partial_.try_emplace(f.message_id);
  auto& p = it->second;
  if (fresh) {
    p.count = f.count;
    p.first_seen = now;
  } else if (p.count != f.count) {
    return std::nullopt;  // inconsistent with what arrived first
  }
  p.parts.try_emplace(f.index, std::move(f.payload));
  if (p.parts.size() < p.count) return std::nullopt;
  Bytes out;
  for (auto& [idx, part] : p.parts) out.insert(out.end(), part.begin(), part.end());
  partial_.erase(it);
  return out;
}

std::vector<std::uint64_t> Reassembler::expire(Clock::time_point now) {
  std::lock_guard lk(mu_);
  std::vector<std::uint64_t> dropped;
  for (auto it = partial_.begin(); it != partial_.end();) {
    if (now - it->second.first_seen > timeout_) {
      dropped.push_back(it->first);
      it = partial_.erase(it);
    } else {
      ++it;
    }
  }
  return dropped;
}

std::size_t Reassembler::pending() const {
  std::lock_guard lk(mu_);
  return partial_.size();
}

}  // namespace chrpc
