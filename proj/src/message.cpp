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

#include "chrpc/message.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <sstream>
#include <stdexcept>

namespace chrpc {

std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (auto c : b) {
    s.push_back(kDigits[c >> 4]);
    s.push_back(kDigits[c & 0xF]);
  }
  return s;
}

namespace {

std::string_view kind_text(TransportKind k) {
  switch (k) {
    case TransportKind::kLoopback: return "loopback";
    case TransportKind::kTcp: return "tcp";
    case TransportKind::kUdp: return "udp";
  }
  return "?";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

Address Address::loopback(std::string object) {
  Address a;
  a.object = std::move(object);
  return a;
}

Address Address::parse(std::string_view text) {
  auto bad = [&](const char* why) {
    return std::invalid_argument("bad address '" + std::string(text) + "': " + why);
  };
  auto sep = text.find("://");
  if (sep == std::string_view::npos) throw bad("missing ://");
  Address a;
  auto kind = text.substr(0, sep);
  if (kind == "loopback") a.transport = TransportKind::kLoopback;
  else if (kind == "tcp") a.transport = TransportKind::kTcp;
  else if (kind == "udp") a.transport = TransportKind::kUdp;
  else throw bad("unknown transport");

  auto rest = text.substr(sep + 3);
  auto slash = rest.find('/');
  if (slash == std::string_view::npos) throw bad("missing object name");
  auto hostport = rest.substr(0, slash);
  a.object = std::string(rest.substr(slash + 1));
  if (a.object.empty()) throw bad("empty object name");
  if (!hostport.empty()) {
    auto colon = hostport.rfind(':');
    if (colon == std::string_view::npos) throw bad("missing port");
    a.host = std::string(hostport.substr(0, colon));
    auto port_text = hostport.substr(colon + 1);
    unsigned long port = 0;
    auto [p, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || p != port_text.data() + port_text.size() || port > 65535)
      throw bad("port out of range");
    a.port = static_cast<std::uint16_t>(port);
  } else if (a.transport != TransportKind::kLoopback) {
    throw bad("tcp/udp need host:port");
  }
  return a;
}

std::string Address::to_string() const {
  std::string s(kind_text(transport));
  s += "://";
  if (!host.empty() || port != 0) s += host + ":" + std::to_string(port);
  s += "/" + object;
  return s;
}

std::string CallId::to_hex() const {
  Bytes b;
  ByteWriter w(b);
  w.u64(hi);
  w.u64(lo);
  return chrpc::to_hex(b);
}

// TaggedValue

TaggedValue::TaggedValue(Message m) : v_(std::make_shared<const Message>(std::move(m))) {}

namespace {
[[noreturn]] void wrong_tag(const char* want) {
  throw std::logic_error(std::string("TaggedValue is not ") + want);
}
}  // namespace

bool TaggedValue::as_bool() const {
  if (auto p = std::get_if<bool>(&v_)) return *p;
  wrong_tag("bool");
}
std::int64_t TaggedValue::as_int() const {
  if (auto p = std::get_if<std::int64_t>(&v_)) return *p;
  wrong_tag("int64");
}
double TaggedValue::as_float() const {
  if (auto p = std::get_if<double>(&v_)) return *p;
  wrong_tag("float64");
}
const std::string& TaggedValue::as_text() const {
  if (auto p = std::get_if<std::string>(&v_)) return *p;
  wrong_tag("text");
}
const Bytes& TaggedValue::as_bytes() const {
  if (auto p = std::get_if<Bytes>(&v_)) return *p;
  wrong_tag("bytes");
}
const TaggedValue::List& TaggedValue::as_list() const {
  if (auto p = std::get_if<List>(&v_)) return *p;
  wrong_tag("list");
}
const Message& TaggedValue::as_message() const {
  if (auto p = std::get_if<std::shared_ptr<const Message>>(&v_)) return **p;
  wrong_tag("message");
}

std::string TaggedValue::to_string() const {
  switch (tag()) {
    case ValueTag::kUnit: return "()";
    case ValueTag::kBool: return as_bool() ? "true" : "false";
    case ValueTag::kInt64: return std::to_string(as_int());
    case ValueTag::kFloat64: {
      std::ostringstream os;
      os << as_float();
      return os.str();
    }
    case ValueTag::kText: return as_text();
    case ValueTag::kBytes: return "0x" + to_hex(as_bytes());
    case ValueTag::kList: {
      std::string s = "[";
      for (const auto& e : as_list()) {
        if (s.size() > 1) s += ", ";
        s += e.to_string();
      }
      return s + "]";
    }
    case ValueTag::kMessage: return as_message().method + "(...)";
  }
  return "?";
}

bool operator==(const TaggedValue& a, const TaggedValue& b) {
  if (a.tag() != b.tag()) return false;
  switch (a.tag()) {
    case ValueTag::kFloat64:
      return std::bit_cast<std::uint64_t>(a.as_float()) == std::bit_cast<std::uint64_t>(b.as_float());
    case ValueTag::kMessage:
      return a.as_message() == b.as_message();
    default:
      return a.v_ == b.v_;
  }
}

// Wrapping

Message wrap(std::string outer_method, Message inner, std::vector<TaggedValue> extra) {
  Message outer;
  outer.target = inner.target;
  outer.return_address = inner.return_address;
  outer.call_id = inner.call_id;
  outer.one_cast = inner.one_cast;
  outer.phase = inner.phase;
  outer.method = std::move(outer_method);
  outer.params = std::move(extra);
  outer.params.emplace_back(std::move(inner));
  return outer;
}

Unwrapped unwrap(const Message& m, Phase at, std::string_view handler) {
  if (!m.is_wrapper()) {
    raise(FaultKind::kChannel, at, std::string(handler),
          "NotAWrapper: '" + m.method + "' carries no inner message");
  }
  Unwrapped u{m.params.back().as_message(), {m.params.begin(), m.params.end() - 1}};
  return u;
}

Message retarget(Message m, const Address& from, const Address& to) {
  if (m.target == from) m.target = to;
  if (m.is_wrapper()) {
    m.params.back() = TaggedValue(retarget(m.params.back().as_message(), from, to));
  }
  return m;
}

// Interfaces

void InterfaceRegistry::add(std::string method, Signature sig) {
  std::lock_guard lk(mu_);
  sigs_[std::move(method)] = std::move(sig);
}

const Signature* InterfaceRegistry::find(std::string_view method) const {
  std::lock_guard lk(mu_);
  auto it = sigs_.find(method);
  return it == sigs_.end() ? nullptr : &it->second;
}

bool is_one_cast(const Message& m, const InterfaceRegistry& interfaces) {
  if (m.one_cast) return true;
  const Signature* sig = interfaces.find(m.method);
  if (!sig) {
    raise(FaultKind::kApplication, m.phase, "", "UnknownMethod: " + m.method);
  }
  return !sig->returns_result && sig->faults.empty();
}

// Identifiers, clocks, randomness

CallIdGenerator::CallIdGenerator() {
  std::random_device rd;
  prefix_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  auto t = static_cast<std::uint64_t>(
      std::chrono::steady_clock::now().time_since_epoch().count());
  prefix_ = splitmix64(prefix_ ^ t) | 1;
}

CallIdGenerator::CallIdGenerator(std::uint64_t seed) : prefix_(splitmix64(seed) | 1) {}

CallId CallIdGenerator::next() { return CallId{prefix_, ++counter_}; }

CallId new_call_id() {
  static CallIdGenerator gen = [] {
    if (auto seed = seed_from_env()) return CallIdGenerator(*seed);
    return CallIdGenerator();
  }();
  return gen.next();
}

std::int64_t SystemClock::now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::int64_t SeededClock::epoch_for(std::uint64_t seed) {
  return 1'700'000'000'000 + static_cast<std::int64_t>(seed % 1'000'000) * 1000;
}

SeededClock::SeededClock(std::uint64_t seed) : now_(epoch_for(seed)) {}

std::int64_t SeededClock::now_ms() { return now_.fetch_add(1); }

RandomSource::RandomSource() : rng_(std::random_device{}()) {}
RandomSource::RandomSource(std::uint64_t seed) : rng_(splitmix64(seed ^ 0x5EED)) {}

Bytes RandomSource::bytes(std::size_t n) {
  std::lock_guard lk(mu_);
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng_() >> 56);
  return out;
}

std::uint64_t RandomSource::u64() {
  std::lock_guard lk(mu_);
  return rng_();
}

std::optional<std::uint64_t> seed_from_env() {
  const char* s = std::getenv("CHANNELRPC_SEED");
  if (!s || !*s) return std::nullopt;
  std::uint64_t v = 0;
  auto end = s + std::strlen(s);
  auto [p, ec] = std::from_chars(s, end, v);
  if (ec != std::errc{} || p != end) return std::nullopt;
  return v;
}

std::string iso8601_ms(std::int64_t epoch_ms) {
  std::time_t secs = static_cast<std::time_t>(epoch_ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(epoch_ms % 1000));
  return buf;
}

}  // namespace chrpc
