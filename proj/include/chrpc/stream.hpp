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

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "chrpc/byte_io.hpp"
#include "chrpc/handler.hpp"

namespace chrpc {

// Stream handlers below the marshalling boundary. The receive chain lists
// the inverses in the same order as the peer's send chain and is applied
// back to front.
struct StreamStack {
  std::vector<std::shared_ptr<StreamHandler>> send_chain;
  std::vector<std::shared_ptr<StreamHandler>> receive_chain;
};

Bytes chain_send(const StreamStack& stack, ByteView data, CallContext& ctx);
Bytes chain_receive(const StreamStack& stack, ByteView data, CallContext& ctx);

// UDP fragment: marker 0xF5 | message-id u64 | index u16 | count u16 | length u16 | payload
inline constexpr std::uint8_t kFragmentMarker = 0xF5;
inline constexpr std::size_t kFragmentHeaderSize = 15;

struct Fragment {
  std::uint64_t message_id = 0;
  std::uint16_t index = 0;
  std::uint16_t count = 1;
  Bytes payload;

  friend bool operator==(const Fragment&, const Fragment&) = default;
};

Bytes encode_fragment(const Fragment& f);
// Throws FaultError(transport, "segmenter") on malformed input.
Fragment decode_fragment(ByteView b);

// Splits into ceil(len / (mtu - 15)) fragments; an empty input still yields
// one empty fragment. Throws std::invalid_argument if mtu <= 15 or the
// fragment count would not fit in 16 bits.
std::vector<Fragment> segment(ByteView data, std::size_t mtu, std::uint64_t message_id);

// Stateless reassembly of one message from a fragment set in any order.
// Returns nullopt while incomplete; duplicates are ignored.
std::optional<Bytes> reassemble(const std::vector<Fragment>& frags);

// Incremental reassembly across interleaved message ids with a timeout on
// partial state.
class Reassembler {
 public:
  using Clock = std::chrono::steady_clock;

  explicit Reassembler(std::chrono::milliseconds timeout = std::chrono::seconds(2))
      : timeout_(timeout) {}

  std::optional<Bytes> add(Fragment f, Clock::time_point now = Clock::now());
  // Drops partial messages older than the timeout; returns their ids.
  std::vector<std::uint64_t> expire(Clock::time_point now = Clock::now());
  std::size_t pending() const;

 private:
  struct Partial {
    std::uint16_t count = 0;
    std::map<std::uint16_t, Bytes> parts;
    Clock::time_point first_seen;
  };
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, Partial> partial_;
};

}  // namespace chrpc
