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

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "ebr/harness.hpp"

namespace ebr {

double hit_at_k(const std::vector<ItemId>& retrieved, ItemId clicked,
                std::size_t k) {
  const std::size_t take = std::min(k, retrieved.size());
  for (std::size_t i = 0; i < take; ++i) {
    if (retrieved[i] == clicked) return 1.0;
  }
  return 0.0;
}

double rel_at_k(const std::vector<ItemId>& retrieved,
                const std::function<double(ItemId)>& relevance,
                std::size_t k) {
  if (retrieved.empty()) {
    throw std::invalid_argument("rel_at_k: empty retrieval list");
  }
  const std::size_t take = std::min(k, retrieved.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    acc += relevance(retrieved[i]);
  }
  return acc / static_cast<double>(take);
}

double recall_at_k(const std::vector<ItemId>& retrieved,
                   const std::vector<ItemId>& truth, std::size_t k) {
  std::unordered_set<ItemId> want;
  for (std::size_t i = 0; i < std::min(k, truth.size()); ++i) {
    want.insert(truth[i]);
  }
  if (want.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, retrieved.size()); ++i) {
    if (want.count(retrieved[i]) != 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(want.size());
}

double ndcg_at_k(const std::vector<ItemId>& retrieved,
                 const std::function<double(ItemId)>& gain,
                 const std::vector<double>& ideal_gains, std::size_t k) {
  if (ideal_gains.empty()) {
    throw std::invalid_argument("ndcg_at_k: empty ground truth");
  }
  double dcg = 0.0;
  const std::size_t take = std::min(k, retrieved.size());
  for (std::size_t i = 0; i < take; ++i) {
    dcg += gain(retrieved[i]) / std::log2(static_cast<double>(i) + 2.0);
  }
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(k, ideal_gains.size()); ++i) {
    ideal += ideal_gains[i] / std::log2(static_cast<double>(i) + 2.0);
  }
  if (ideal == 0.0) {
    throw std::invalid_argument("ndcg_at_k: ideal gain is zero");
  }
  return dcg / ideal;
}

double ndcg_binary_at_k(const std::vector<ItemId>& retrieved,
                        const std::unordered_set<ItemId>& relevant,
                        std::size_t k) {
  if (relevant.empty()) {
    throw std::invalid_argument("ndcg_binary_at_k: empty ground truth");
  }
  std::vector<double> ideal(std::min(k, relevant.size()), 1.0);
  return ndcg_at_k(
      retrieved,
      [&](ItemId id) { return relevant.count(id) != 0 ? 1.0 : 0.0; }, ideal,
      k);
}

double mrr(const std::vector<ItemId>& retrieved,
           const std::unordered_set<ItemId>& relevant) {
  if (relevant.empty()) {
    throw std::invalid_argument("mrr: empty ground truth");
  }
  for (std::size_t i = 0; i < retrieved.size(); ++i) {
    if (relevant.count(retrieved[i]) != 0) {
      return 1.0 / static_cast<double>(i + 1);
    }
  }
  return 0.0;
}

double modeled_latency_micros(const SearchStats& stats) {
  return static_cast<double>(stats.sector_reads) * kSectorReadMicros +
         static_cast<double>(stats.pq_evals) * kPqEvalMicros +
         static_cast<double>(stats.exact_evals) * kExactEvalMicros;
}

}  // namespace ebr
