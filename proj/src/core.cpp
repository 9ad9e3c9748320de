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

#include "ebr/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ebr {

double inner_product(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("inner_product: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

double l2_norm(const Embedding& a) {
  double acc = 0.0;
  for (double v : a) {
    acc += v * v;
  }
  return std::sqrt(acc);
}

double l2_distance(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("l2_distance: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

Embedding l2_normalize(const Embedding& a) {
  const double norm = l2_norm(a);
  if (norm == 0.0) {
    throw std::invalid_argument(
        "l2_normalize: zero vector has no direction");
  }
  Embedding out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = a[i] / norm;
  }
  return out;
}

Embedding f32_grid(const Embedding& a) {
  Embedding out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<double>(static_cast<float>(a[i]));
  }
  return out;
}

std::vector<float> to_f32(const Embedding& a) {
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = static_cast<float>(a[i]);
  }
  return out;
}

Embedding from_f32(std::span<const float> v) {
  Embedding out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<double>(v[i]);
  }
  return out;
}

std::uint64_t hash64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return hash64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

std::uint64_t hash_text(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t Rng::bounded(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("Rng::bounded: n must be > 0");
  }
  // Rejection sampling keeps the draw unbiased and deterministic.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = next_u64();
  while (x >= limit) {
    x = next_u64();
  }
  return x % n;
}

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::lognormal(double mu, double sigma) {
  return std::exp(mu + sigma * normal());
}

std::vector<std::uint64_t> Rng::sample_without_replacement(std::uint64_t n,
                                                           std::uint64_t k) {
  if (k > n) {
    throw std::invalid_argument("sample_without_replacement: k > n");
  }
  std::vector<std::uint64_t> pool(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    pool[i] = i;
  }
  std::vector<std::uint64_t> out;
  out.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) {
    const std::uint64_t j = i + bounded(n - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace ebr
