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

#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace ebr {

using ItemId = std::uint64_t;

// All-one bits, reserved: never a valid item, marks an unused neighbor slot.
inline constexpr ItemId kNoNeighbor = ~ItemId{0};

// Dense embedding. Training-side arithmetic is 64-bit; stored vectors are
// 32-bit (see to_f32 / f32_grid below).
using Embedding = std::vector<double>;

/// Inner product <a, b>. Throws std::invalid_argument on dimension mismatch.
double inner_product(const Embedding& a, const Embedding& b);

double l2_norm(const Embedding& a);

double l2_distance(const Embedding& a, const Embedding& b);

/// a / ||a||. Throws std::invalid_argument for the zero vector.
Embedding l2_normalize(const Embedding& a);

/// Rounds every entry through IEEE-754 f32, so that a vector written to disk
/// and read back compares bit-equal with the in-memory copy.
Embedding f32_grid(const Embedding& a);

std::vector<float> to_f32(const Embedding& a);
Embedding from_f32(std::span<const float> v);

/// SplitMix64 finalizer; also used to derive per-pair deterministic noise.
std::uint64_t hash64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_text(std::string_view s);  // FNV-1a 64

// Deterministic RNG. The engine (mt19937_64) and all distribution code here
// are fully specified, so equal seeds give equal streams on every platform.
// std::*_distribution is implementation-defined and deliberately not used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t bounded(std::uint64_t n);

  /// Standard normal via Box-Muller. Draws two engine values per call.
  double normal();

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  double lognormal(double mu, double sigma);

  /// Independent child stream; deterministic in (seed, salt).
  Rng fork(std::uint64_t salt) const {
    return Rng(hash64(seed_ ^ hash64(salt + 0x9e3779b97f4a7c15ULL)));
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[bounded(i)]);
    }
  }

  /// k distinct values from [0, n), in selection order.
  std::vector<std::uint64_t> sample_without_replacement(std::uint64_t n,
                                                        std::uint64_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace ebr
