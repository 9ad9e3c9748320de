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
#include <vector>

#include "ebr/graph.hpp"
#include "ebr/store.hpp"

namespace ebr {

struct SearchParams {
  std::size_t k = 10;
  std::size_t queue_size = 64;  // fixed-size candidate queue (L)
  std::size_t beam_width = 4;   // records fetched per hop

  void validate() const;
};

struct SearchStats {
  std::uint64_t hops = 0;
  std::uint64_t sector_reads = 0;
  std::uint64_t pq_evals = 0;
  std::uint64_t exact_evals = 0;
};

struct SearchResult {
  std::vector<SearchHit> items;  // exact scores, descending (ties: lower id)
  SearchStats stats;
};

/// Two-step ANN: coarse beam search over the on-disk graph ordered by ADC
/// scores against tier-one codes, caching every fetched full-precision
/// vector, then post-verification that re-scores the whole queue with exact
/// inner products from the cache. Returns min(k, N) items.
SearchResult search(const TierOne& tier1, PostingReader& reader,
                    const Embedding& query, const SearchParams& params);

/// Same, with the routing and verification queries split: `route` drives the
/// ADC ordering over tier-one codes, `verify` scores the stored vectors. Used
/// by the bi-stage pipeline where tier-two vectors live in a different head's
/// space than the codes.
SearchResult search(const TierOne& tier1, PostingReader& reader,
                    const Embedding& route, const Embedding& verify,
                    const SearchParams& params);

/// Exact MIPS top-k; ties break to the lower id. The oracle for every recall
/// measurement, kept independent of the index path.
std::vector<SearchHit> brute_force(const std::vector<Embedding>& corpus,
                                   const Embedding& query, std::size_t k);

std::vector<SearchHit> brute_force(
    const std::vector<std::vector<float>>& corpus, const Embedding& query,
    std::size_t k);

/// |top-k of `got` ∩ exact top-k| / k.
double recall_against(const std::vector<SearchHit>& got,
                      const std::vector<SearchHit>& truth, std::size_t k);

}  // namespace ebr
