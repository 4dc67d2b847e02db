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
#include <string>

#include "chrpc/byte_io.hpp"
#include "chrpc/message.hpp"

namespace chrpc {

// WireFrame layout (big-endian):
//   magic "ODPC" | version 0x01 | phase u8 | flags u8 | call-id 16 | length u32 | payload
inline constexpr std::uint8_t kWireMagic[4] = {'O', 'D', 'P', 'C'};
inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kFrameHeaderSize = 27;

namespace frame_flags {
inline constexpr std::uint8_t kOneCast = 0x01;
inline constexpr std::uint8_t kReply = 0x02;
// Channel-object traffic (e.g. key exchange); bypasses the negotiated stacks.
inline constexpr std::uint8_t kControl = 0x04;
// Reply result is a response-channel wrapper message.
inline constexpr std::uint8_t kEnveloped = 0x08;
}  // namespace frame_flags

// Address sentinel for a nested message whose address equals its wrapper's.
inline constexpr std::uint8_t kInheritAddress = 0xFF;

struct FrameHeader {
  Phase phase = Phase::kRequest;
  std::uint8_t flags = 0;
  CallId call_id;
  std::uint32_t payload_length = 0;

  bool is_reply() const { return flags & frame_flags::kReply; }
  bool is_control() const { return flags & frame_flags::kControl; }
};

// All decoding errors surface as FaultError(channel, handler "marshal",
// detail starting with "MalformedFrame").
FrameHeader read_header(ByteView frame, Phase at = Phase::kIndication);
bool looks_like_frame(ByteView bytes);

Bytes marshal_message(const Message& m, bool control = false);
Message unmarshal_message(ByteView frame, Phase at = Phase::kIndication);

// Rejects Fault kind=cleared anywhere in the containment chain.
Bytes marshal_reply(const Reply& r, Phase phase = Phase::kResponse, bool control = false);
Reply unmarshal_reply(ByteView frame, Phase at = Phase::kConfirmation);

// Partial decode: header, both addresses and the method name only.
struct MethodPeek {
  std::string method;
  CallId call_id;
  bool one_cast = false;
  std::size_t consumed = 0;  // offset just past the method field
};
MethodPeek peek_method(ByteView frame, Phase at = Phase::kIndication);

}  // namespace chrpc
