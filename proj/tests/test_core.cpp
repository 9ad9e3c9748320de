// Copyright 2026-present the ebr authors
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ebr/core.hpp"

using namespace ebr;

TEST_CASE("inner_product basics") {
  CHECK(inner_product({1, 2}, {3, 4}) == doctest::Approx(11).epsilon(1e-12));
  CHECK(inner_product({5, -3, 2}, {0, 0, 0}) == 0.0);
  CHECK(inner_product({3, 4}, {3, 4}) == doctest::Approx(25).epsilon(1e-12));
  CHECK_THROWS_AS(inner_product({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("inner_product is symmetric and bilinear") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Embedding a(8), b(8), c(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      c[i] = rng.normal();
    }
    const double s = rng.normal();
    CHECK(inner_product(a, b) ==
          doctest::Approx(inner_product(b, a)).epsilon(1e-9));
    Embedding sb_plus_c(8);
    for (int i = 0; i < 8; ++i) sb_plus_c[i] = s * b[i] + c[i];
    CHECK(inner_product(a, sb_plus_c) ==
          doctest::Approx(s * inner_product(a, b) + inner_product(a, c))
              .epsilon(1e-9));
  }
}

TEST_CASE("l2_normalize") {
  const Embedding n = l2_normalize({3, 4});
  CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-12));

  const Embedding unit = l2_normalize({1, 0, 0});
  CHECK(unit[0] == 1.0);

  CHECK_THROWS_AS(l2_normalize({0, 0}), std::invalid_argument);

  // idempotent within 1e-6
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Embedding v(5);
    for (double& x : v) x = rng.normal();
    const Embedding once = l2_normalize(v);
    const Embedding twice = l2_normalize(once);
    CHECK(l2_norm(once) == doctest::Approx(1.0).epsilon(1e-6));
    for (int i = 0; i < 5; ++i) {
      CHECK(once[i] == doctest::Approx(twice[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("rng reproducibility: equal seeds, equal streams") {
  Rng a(123456789), b(123456789);
  for (int i = 0; i < 10000; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
  Rng c(1), d(2);
  bool all_equal = true;
  for (int i = 0; i < 100; ++i) {
    if (c.next_u64() != d.next_u64()) all_equal = false;
  }
  CHECK_FALSE(all_equal);
}

TEST_CASE("rng forks are independent of parent consumption") {
  Rng a(99);
  Rng fork_before = a.fork(7);
  a.next_u64();
  Rng fork_after = a.fork(7);
  CHECK(fork_before.next_u64() == fork_after.next_u64());
}

TEST_CASE("rng distributions stay in range") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.bounded(7) < 7);
    CHECK(rng.lognormal(0.0, 0.5) > 0.0);
  }
  // Box-Muller sanity: mean near 0, variance near 1.
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("sample_without_replacement yields distinct values") {
  Rng rng(11);
  auto picks = rng.sample_without_replacement(10, 10);
  std::sort(picks.begin(), picks.end());
  for (std::uint64_t i = 0; i < 10; ++i) CHECK(picks[i] == i);
}

TEST_CASE("f32 grid round-trips through float storage") {
  Rng rng(2);
  Embedding v(16);
  for (double& x : v) x = rng.normal() * 1e3;
  const Embedding snapped = f32_grid(v);
  const Embedding back = from_f32(to_f32(snapped));
  for (int i = 0; i < 16; ++i) {
    CHECK(snapped[i] == back[i]);
  }
}
