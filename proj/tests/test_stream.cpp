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

#include <algorithm>
#include <random>

#include "chrpc/stream.hpp"
#include "doctest.h"

using namespace chrpc;

namespace {

Bytes pattern(std::size_t n) {
  Bytes b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 7 + 3);
  return b;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

TEST_SUITE("stream") {

TEST_CASE("fragment counts follow the header overhead") {
  CHECK(segment(pattern(100), 65, 1).size() == 2);  // 50 bytes per fragment
  CHECK(segment(pattern(50), 65, 1).size() == 1);
  CHECK(segment(pattern(51), 65, 1).size() == 2);
  CHECK(segment(pattern(10240), 1200, 1).size() == ceil_div(10240, 1185));
  CHECK(segment(Bytes{}, 100, 1).size() == 1);
  CHECK_THROWS_AS(segment(pattern(10), 15, 1), std::invalid_argument);
  CHECK_THROWS_AS(segment(pattern(70000), 16, 1), std::invalid_argument);  // > 65535 fragments
}

TEST_CASE("every encoded fragment fits the mtu") {
  for (auto& f : segment(pattern(5000), 300, 9)) {
    auto e = encode_fragment(f);
    CHECK(e.size() <= 300);
    CHECK(e[0] == kFragmentMarker);
    CHECK(decode_fragment(e) == f);
  }
}

TEST_CASE("reassembly in any order, duplicates ignored") {
  std::mt19937_64 rng(3);
  auto data = pattern(4000);
  auto frags = segment(data, 500, 77);
  frags.push_back(frags[2]);
  std::shuffle(frags.begin(), frags.end(), rng);
  CHECK(reassemble(frags) == data);
  frags.erase(std::remove_if(frags.begin(), frags.end(), [](const Fragment& f) { return f.index == 1; }),
              frags.end());
  CHECK_FALSE(reassemble(frags));
}

TEST_CASE("incremental reassembly interleaves messages and expires partials") {
  Reassembler r(std::chrono::milliseconds(100));
  auto a = segment(pattern(300), 100, 1);
  auto b = segment(pattern(200), 100, 2);
  auto t0 = Reassembler::Clock::now();
  CHECK_FALSE(r.add(a[0], t0));
  CHECK_FALSE(r.add(b[0], t0));
  CHECK(r.pending() == 2);
  for (std::size_t i = 1; i < b.size(); ++i) {
    auto done = r.add(b[i], t0);
    if (i + 1 == b.size()) CHECK(done == pattern(200));
  }
  auto dropped = r.expire(t0 + std::chrono::milliseconds(200));
  CHECK(dropped == std::vector<std::uint64_t>{1});
  CHECK(r.pending() == 0);
}

TEST_CASE("malformed fragments are transport faults") {
  auto e = encode_fragment(segment(pattern(10), 100, 1)[0]);
  auto bad = e;
  bad[0] = 0;
  CHECK_THROWS_AS(decode_fragment(bad), FaultError);
  bad = e;
  bad.pop_back();
  CHECK_THROWS_AS(decode_fragment(bad), FaultError);
  try {
    decode_fragment(Bytes{kFragmentMarker});
  } catch (const FaultError& x) {
    CHECK(x.fault().kind == FaultKind::kTransport);
  }
}

}  // TEST_SUITE
