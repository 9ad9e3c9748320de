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
#include <functional>
#include <vector>

#include "ebr/core.hpp"

namespace ebr {

struct BuildParams {
  std::uint32_t max_degree = 32;   // R
  std::uint32_t build_queue = 64;  // L during construction
  double alpha = 1.2;              // final-pass prune slack
  std::uint32_t passes = 2;        // earlier passes run with alpha = 1.0

  void validate() const;
};

// Bounded-degree proximity graph. Node ids are dense ranks 0..size()-1;
// mapping to external ItemIds happens at the storage layer.
struct VamanaGraph {
  std::uint32_t max_degree = 0;
  ItemId entry_point = kNoNeighbor;
  std::vector<std::vector<ItemId>> adjacency;

  std::size_t size() const { return adjacency.size(); }
};

struct SearchHit {
  ItemId id = kNoNeighbor;
  double score = 0.0;
};

struct GreedyResult {
  std::vector<SearchHit> top;     // best k, score descending (ties: lower id)
  std::vector<ItemId> visited;    // every expanded node, in visit order
};

/// Beam search from the entry point. Keeps a queue of the best `queue_size`
/// scored candidates and expands the best unvisited one until the whole queue
/// has been visited. `score` is the similarity of a node to the caller's
/// query (exact inner product or an ADC lookup). Throws on an empty graph.
GreedyResult greedy_search(const VamanaGraph& g,
                           const std::function<double(ItemId)>& score,
                           std::size_t k, std::size_t queue_size);

/// Alpha-RNG pruning: repeatedly admit the closest remaining candidate p*,
/// then drop every candidate c with alpha * dist(p*, c) <= dist(p, c).
/// `candidates` carry their distance to p; `dist` supplies pairwise
/// distances between candidates. Returns at most max_degree ids.
std::vector<ItemId> robust_prune(
    ItemId p, std::vector<std::pair<ItemId, double>> candidates, double alpha,
    std::uint32_t max_degree,
    const std::function<double(ItemId, ItemId)>& dist);

/// Two-pass incremental construction: random initial neighbors, then for each
/// node (in a seeded random order) a greedy search from the medoid, robust
/// pruning of the visited set, and reverse-edge insertion with re-pruning on
/// overflow. Traversal order uses inner products, pruning geometry uses L2.
VamanaGraph build_vamana(const std::vector<Embedding>& vectors,
                         const BuildParams& params, Rng& rng);

/// Ranks reachable from the entry point (BFS).
std::vector<ItemId> reachable_from_entry(const VamanaGraph& g);

}  // namespace ebr
