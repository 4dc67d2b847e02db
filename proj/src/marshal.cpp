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

#include "chrpc/marshal.hpp"

#include <algorithm>
#include <bit>

namespace chrpc {

namespace {

constexpr int kMaxNesting = 64;

[[noreturn]] void malformed(Phase at, const std::string& why) {
  raise(FaultKind::kChannel, at, "marshal", "MalformedFrame: " + why);
}

void encode_address(ByteWriter& w, const Address& a) {
  w.u8(static_cast<std::uint8_t>(a.transport));
  w.text(a.host);
  w.u16(a.port);
  w.text(a.object);
}

void encode_address_or_inherit(ByteWriter& w, const Address& a, const Address& parent) {
  if (a == parent) {
    w.u8(kInheritAddress);
    return;
  }
  encode_address(w, a);
}

void write_call_id(ByteWriter& w, const CallId& id) {
  w.u64(id.hi);
  w.u64(id.lo);
}

CallId read_call_id(ByteReader& r) {
  CallId id;
  id.hi = r.u64();
  id.lo = r.u64();
  return id;
}

struct Decoder {
  ByteReader r;
  Phase at;
  int depth = 0;

  Address address() {
    auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(TransportKind::kUdp)) malformed(at, "bad transport kind");
    return address_body(kind);
  }

  Address address_or_inherit(const Address& parent) {
    auto kind = r.u8();
    if (kind == kInheritAddress) return parent;
    if (kind > static_cast<std::uint8_t>(TransportKind::kUdp)) malformed(at, "bad transport kind");
    return address_body(kind);
  }

  Address address_body(std::uint8_t kind) {
    Address a;
    a.transport = static_cast<TransportKind>(kind);
    a.host = r.text();
    a.port = r.u16();
    a.object = r.text();
    if (a.object.empty()) malformed(at, "empty object name");
    return a;
  }

  Phase phase() {
    auto p = r.u8();
    if (!valid_phase_code(p)) malformed(at, "bad phase code");
    return static_cast<Phase>(p);
  }

  void params(Message& m) {
    auto n = r.u32();
    if (n > r.remaining()) malformed(at, "param count exceeds frame");
    m.params.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) m.params.push_back(value(m));
  }

  std::string method() {
    auto s = r.text();
    if (s.empty()) malformed(at, "empty method");
    return s;
  }

  TaggedValue value(const Message& parent) {
    if (++depth > kMaxNesting) malformed(at, "nesting too deep");
    TaggedValue v = value_body(parent);
    --depth;
    return v;
  }

  TaggedValue value_body(const Message& parent) {
    auto tag = r.u8();
    switch (static_cast<ValueTag>(tag)) {
      case ValueTag::kUnit: return Unit{};
      case ValueTag::kBool: {
        auto b = r.u8();
        if (b > 1) malformed(at, "bad bool");
        return b == 1;
      }
      case ValueTag::kInt64: return static_cast<std::int64_t>(r.u64());
      case ValueTag::kFloat64: return std::bit_cast<double>(r.u64());
      case ValueTag::kText: return r.text();
      case ValueTag::kBytes: return r.blob();
      case ValueTag::kList: {
        auto n = r.u32();
        if (n > r.remaining()) malformed(at, "list count exceeds frame");
        TaggedValue::List items;
        items.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) items.push_back(value(parent));
        return items;
      }
      case ValueTag::kMessage: return nested(parent);
    }
    malformed(at, "unknown value tag " + std::to_string(tag));
  }

  Message nested(const Message& parent) {
    Message m;
    m.target = address_or_inherit(parent.target);
    m.return_address = address_or_inherit(parent.return_address);
    m.method = method();
    // Identity follows the params on the wire, so nested params resolve
    // against this message's addresses and the enclosing identity.
    Message scratch = m;
    scratch.call_id = parent.call_id;
    scratch.phase = parent.phase;
    scratch.one_cast = parent.one_cast;
    params(scratch);
    auto meta = r.u8();
    if (meta == 0) {
      m.call_id = parent.call_id;
      m.phase = parent.phase;
      m.one_cast = parent.one_cast;
    } else if (meta == 1) {
      m.phase = phase();
      auto flags = r.u8();
      if (flags > 1) malformed(at, "bad nested flags");
      m.one_cast = flags == 1;
      m.call_id = read_call_id(r);
    } else {
      malformed(at, "bad nested meta");
    }
    m.params = std::move(scratch.params);
    return m;
  }
};

struct Encoder {
  ByteWriter w;

  void params(const Message& m) {
    w.u32(static_cast<std::uint32_t>(m.params.size()));
    for (const auto& p : m.params) value(p, m);
  }

  void value(const TaggedValue& v, const Message& parent) {
    w.u8(static_cast<std::uint8_t>(v.tag()));
    switch (v.tag()) {
      case ValueTag::kUnit: break;
      case ValueTag::kBool: w.u8(v.as_bool() ? 1 : 0); break;
      case ValueTag::kInt64: w.u64(static_cast<std::uint64_t>(v.as_int())); break;
      case ValueTag::kFloat64: w.u64(std::bit_cast<std::uint64_t>(v.as_float())); break;
      case ValueTag::kText: w.text(v.as_text()); break;
      case ValueTag::kBytes: w.blob(v.as_bytes()); break;
      case ValueTag::kList:
        w.u32(static_cast<std::uint32_t>(v.as_list().size()));
        for (const auto& e : v.as_list()) value(e, parent);
        break;
      case ValueTag::kMessage: nested(v.as_message(), parent); break;
    }
  }

  // Mirrors Decoder::nested.
  void nested(const Message& m, const Message& parent) {
    encode_address_or_inherit(w, m.target, parent.target);
    encode_address_or_inherit(w, m.return_address, parent.return_address);
    w.text(m.method);
    Message scratch = m;
    scratch.call_id = parent.call_id;
    scratch.phase = parent.phase;
    scratch.one_cast = parent.one_cast;
    params(scratch);
    if (m.call_id == parent.call_id && m.phase == parent.phase && m.one_cast == parent.one_cast) {
      w.u8(0);
    } else {
      w.u8(1);
      w.u8(static_cast<std::uint8_t>(m.phase));
      w.u8(m.one_cast ? 1 : 0);
      write_call_id(w, m.call_id);
    }
  }

  void fault(const Fault& f) {
    if (f.kind == FaultKind::kCleared) {
      raise(FaultKind::kChannel, f.origin, "marshal", "cleared fault is never marshalled");
    }
    w.u8(static_cast<std::uint8_t>(f.kind));
    w.u8(static_cast<std::uint8_t>(f.origin));
    w.text(f.handler);
    w.text(f.detail);
    w.u8(f.contained ? 1 : 0);
    if (f.contained) fault(*f.contained);
  }
};

void write_header(Bytes& out, Phase phase, std::uint8_t flags, const CallId& id) {
  ByteWriter w(out);
  w.raw(kWireMagic);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(phase));
  w.u8(flags);
  write_call_id(w, id);
  w.u32(0);  // patched by finish_frame
}

void finish_frame(Bytes& out) {
  auto len = static_cast<std::uint32_t>(out.size() - kFrameHeaderSize);
  for (int i = 0; i < 4; ++i) out[kFrameHeaderSize - 4 + i] = static_cast<std::uint8_t>(len >> (24 - 8 * i));
}

FrameHeader parse_header(ByteReader& r, Phase at, std::size_t total) {
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kWireMagic))) malformed(at, "bad magic");
  if (r.u8() != kWireVersion) malformed(at, "unsupported version");
  FrameHeader h;
  auto p = r.u8();
  if (!valid_phase_code(p)) malformed(at, "bad phase code");
  h.phase = static_cast<Phase>(p);
  h.flags = r.u8();
  if (h.flags & 0xF0) malformed(at, "reserved flag bits set");
  h.call_id = read_call_id(r);
  h.payload_length = r.u32();
  if (h.payload_length != total - kFrameHeaderSize) malformed(at, "payload length mismatch");
  return h;
}

Fault decode_fault(Decoder& d) {
  if (++d.depth > kMaxNesting) malformed(d.at, "fault nesting too deep");
  Fault f;
  auto kind = d.r.u8();
  if (kind > static_cast<std::uint8_t>(FaultKind::kRebind) ||
      kind == static_cast<std::uint8_t>(FaultKind::kCleared))
    malformed(d.at, "bad fault kind");
  f.kind = static_cast<FaultKind>(kind);
  f.origin = d.phase();
  f.handler = d.r.text();
  f.detail = d.r.text();
  auto has = d.r.u8();
  if (has > 1) malformed(d.at, "bad containment flag");
  if (has) f.contained = std::make_shared<const Fault>(decode_fault(d));
  --d.depth;
  return f;
}

}  // namespace

FrameHeader read_header(ByteView frame, Phase at) {
  try {
    ByteReader r(frame);
    return parse_header(r, at, frame.size());
  } catch (const ByteReader::TruncatedInput&) {
    malformed(at, "truncated");
  }
}

bool looks_like_frame(ByteView bytes) {
  return bytes.size() >= kFrameHeaderSize &&
         std::equal(std::begin(kWireMagic), std::end(kWireMagic), bytes.begin()) &&
         bytes[4] == kWireVersion;
}

Bytes marshal_message(const Message& m, bool control) {
  if (m.method.empty()) raise(FaultKind::kChannel, m.phase, "marshal", "empty method");
  Bytes out;
  std::uint8_t flags = (m.one_cast ? frame_flags::kOneCast : 0) | (control ? frame_flags::kControl : 0);
  write_header(out, m.phase, flags, m.call_id);
  Encoder e{ByteWriter(out)};
  encode_address(e.w, m.target);
  encode_address(e.w, m.return_address);
  e.w.text(m.method);
  e.params(m);
  finish_frame(out);
  return out;
}

Message unmarshal_message(ByteView frame, Phase at) {
  Decoder d{ByteReader(frame), at};
  try {
    auto h = parse_header(d.r, at, frame.size());
    if (h.is_reply()) malformed(at, "reply frame where a call was expected");
    Message m;
    m.phase = h.phase;
    m.one_cast = h.flags & frame_flags::kOneCast;
    m.call_id = h.call_id;
    m.target = d.address();
    m.return_address = d.address();
    m.method = d.method();
    d.params(m);
    if (!d.r.done()) malformed(at, "trailing bytes");
    return m;
  } catch (const ByteReader::TruncatedInput&) {
    malformed(at, "truncated");
  }
}

Bytes marshal_reply(const Reply& r, Phase phase, bool control) {
  Bytes out;
  std::uint8_t flags = frame_flags::kReply | (control ? frame_flags::kControl : 0) |
                       (r.enveloped ? frame_flags::kEnveloped : 0);
  write_header(out, phase, flags, r.call_id);
  Encoder e{ByteWriter(out)};
  if (r.ok()) {
    e.w.u8(0);
    Message none;
    none.call_id = r.call_id;
    none.phase = phase;
    e.value(r.result(), none);
  } else {
    e.w.u8(1);
    e.fault(r.fault());
  }
  finish_frame(out);
  return out;
}

Reply unmarshal_reply(ByteView frame, Phase at) {
  Decoder d{ByteReader(frame), at};
  try {
    auto h = parse_header(d.r, at, frame.size());
    if (!h.is_reply()) malformed(at, "call frame where a reply was expected");
    Reply rep;
    rep.call_id = h.call_id;
    rep.enveloped = h.flags & frame_flags::kEnveloped;
    auto outcome = d.r.u8();
    if (outcome == 0) {
      Message none;
      none.call_id = h.call_id;
      none.phase = h.phase;
      rep.outcome = d.value(none);
    } else if (outcome == 1) {
      if (rep.enveloped) malformed(at, "enveloped fault");
      rep.outcome = decode_fault(d);
    } else {
      malformed(at, "bad outcome tag");
    }
    if (!d.r.done()) malformed(at, "trailing bytes");
    return rep;
  } catch (const ByteReader::TruncatedInput&) {
    malformed(at, "truncated");
  }
}

MethodPeek peek_method(ByteView frame, Phase at) {
  Decoder d{ByteReader(frame), at};
  try {
    // Header fields are read individually: the payload may be incomplete.
    auto magic = d.r.raw(4);
    if (!std::equal(magic.begin(), magic.end(), std::begin(kWireMagic))) malformed(at, "bad magic");
    if (d.r.u8() != kWireVersion) malformed(at, "unsupported version");
    d.phase();
    auto flags = d.r.u8();
    if (flags & frame_flags::kReply) malformed(at, "reply frames carry no method");
    MethodPeek p;
    p.one_cast = flags & frame_flags::kOneCast;
    p.call_id = read_call_id(d.r);
    d.r.u32();
    d.address();
    d.address();
    p.method = d.method();
    p.consumed = d.r.offset();
    return p;
  } catch (const ByteReader::TruncatedInput&) {
    malformed(at, "truncated");
  }
}

}  // namespace chrpc
