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

#include "ebr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>

namespace ebr {

void BuildParams::validate() const {
  if (max_degree < 2) {
    throw std::invalid_argument("BuildParams: max_degree must be >= 2");
  }
  if (build_queue < max_degree) {
    throw std::invalid_argument(
        "BuildParams: build_queue must be >= max_degree");
  }
  if (alpha < 1.0) {
    throw std::invalid_argument("BuildParams: alpha must be >= 1");
  }
  if (passes == 0) {
    throw std::invalid_argument("BuildParams: passes must be >= 1");
  }
}

namespace {

struct Candidate {
  double score;
  ItemId id;
  bool visited;
};

// Queue order: best score first, ties to the lower id.
bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

}  // namespace

GreedyResult greedy_search(const VamanaGraph& g,
                           const std::function<double(ItemId)>& score,
                           std::size_t k, std::size_t queue_size) {
  if (g.size() == 0) {
    throw std::invalid_argument("greedy_search: empty graph");
  }
  if (k == 0 || k > queue_size) {
    throw std::invalid_argument("greedy_search: need 1 <= k <= queue_size");
  }

  std::vector<Candidate> queue;
  queue.reserve(queue_size + 1);
  std::vector<std::uint8_t> seen(g.size(), 0);

  auto push = [&](ItemId id) {
    if (seen[id]) return;
    seen[id] = 1;
    Candidate c{score(id), id, false};
    auto it = std::lower_bound(queue.begin(), queue.end(), c, better);
    if (queue.size() == queue_size) {
      if (it == queue.end()) return;  // worse than everything retained
      queue.pop_back();
      it = std::lower_bound(queue.begin(), queue.end(), c, better);
    }
    queue.insert(it, c);
  };

  GreedyResult result;
  push(g.entry_point);
  for (;;) {
    Candidate* next = nullptr;
    for (Candidate& c : queue) {
      if (!c.visited) {
        next = &c;
        break;
      }
    }
    if (next == nullptr) break;
    next->visited = true;
    const ItemId current = next->id;
    result.visited.push_back(current);
    for (ItemId nbr : g.adjacency[current]) {
      push(nbr);
    }
  }

  const std::size_t take = std::min(k, queue.size());
  result.top.assign(take, SearchHit{});
  for (std::size_t i = 0; i < take; ++i) {
    result.top[i] = SearchHit{queue[i].id, queue[i].score};
  }
  return result;
}

std::vector<ItemId> robust_prune(
    ItemId p, std::vector<std::pair<ItemId, double>> candidates, double alpha,
    std::uint32_t max_degree,
    const std::function<double(ItemId, ItemId)>& dist) {
  // Closest first; ties to the lower id. Self-references never survive.
  std::sort(candidates.begin(), candidates.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second < b.second;
              return a.first < b.first;
            });
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const auto& a, const auto& b) {
                                 return a.first == b.first;
                               }),
                   candidates.end());

  std::vector<ItemId> kept;
  std::vector<std::uint8_t> dropped(candidates.size(), 0);
  for (std::size_t i = 0; i < candidates.size() && kept.size() < max_degree;
       ++i) {
    if (dropped[i] || candidates[i].first == p) continue;
    const ItemId star = candidates[i].first;
    kept.push_back(star);
    for (std::size_t j = i + 1; j < candidates.size(); ++j) {
      if (dropped[j]) continue;
      if (alpha * dist(star, candidates[j].first) <= candidates[j].second) {
        dropped[j] = 1;
      }
    }
  }
  return kept;
}

namespace {

ItemId pick_medoid(const std::vector<Embedding>& vectors) {
  const std::size_t n = vectors.size();
  const std::size_t dim = vectors.front().size();
  Embedding mean(dim, 0.0);
  for (const Embedding& v : vectors) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  ItemId best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = inner_product(vectors[i], mean);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

// Spanning repair: attach every rank unreachable from the entry point to its
// nearest reachable node, evicting that node's farthest neighbor if full.
void ensure_reachable(VamanaGraph& g, const std::vector<Embedding>& vectors) {
  for (;;) {
    std::vector<std::uint8_t> reached(g.size(), 0);
    for (ItemId r : reachable_from_entry(g)) reached[r] = 1;
    ItemId orphan = kNoNeighbor;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!reached[i]) {
        orphan = i;
        break;
      }
    }
    if (orphan == kNoNeighbor) return;

    ItemId anchor = kNoNeighbor;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!reached[i]) continue;
      const double d = l2_distance(vectors[i], vectors[orphan]);
      if (d < best) {
        best = d;
        anchor = i;
      }
    }
    auto& nbrs = g.adjacency[anchor];
    if (nbrs.size() >= g.max_degree) {
      std::size_t farthest = 0;
      double worst = -1.0;
      for (std::size_t i = 0; i < nbrs.size(); ++i) {
        const double d = l2_distance(vectors[anchor], vectors[nbrs[i]]);
        if (d > worst) {
          worst = d;
          farthest = i;
        }
      }
      nbrs.erase(nbrs.begin() + farthest);
    }
    nbrs.push_back(orphan);
  }
}

}  // namespace

VamanaGraph build_vamana(const std::vector<Embedding>& vectors,
                         const BuildParams& params, Rng& rng) {
  params.validate();
  const std::size_t n = vectors.size();
  if (n == 0) {
    throw std::invalid_argument("build_vamana: empty corpus");
  }

  VamanaGraph g;
  g.max_degree = params.max_degree;
  g.adjacency.assign(n, {});
  g.entry_point = pick_medoid(vectors);
  if (n == 1) {
    return g;
  }

  const std::uint32_t degree =
      static_cast<std::uint32_t>(std::min<std::size_t>(params.max_degree,
                                                       n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    auto picks = rng.sample_without_replacement(n - 1, degree);
    g.adjacency[i].reserve(params.max_degree + 1);
    for (std::uint64_t p : picks) {
      g.adjacency[i].push_back(p >= i ? p + 1 : p);  // skip self
    }
  }

  auto dist = [&](ItemId a, ItemId b) {
    return l2_distance(vectors[a], vectors[b]);
  };

  std::vector<std::uint64_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::uint32_t pass = 0; pass < params.passes; ++pass) {
    const double alpha = (pass + 1 == params.passes) ? params.alpha : 1.0;
    rng.shuffle(order);
    for (std::uint64_t node : order) {
      auto score = [&](ItemId id) {
        return inner_product(vectors[id], vectors[node]);
      };
      const std::size_t queue =
          std::min<std::size_t>(params.build_queue, n);
      GreedyResult res = greedy_search(g, score, 1, queue);

      std::vector<std::pair<ItemId, double>> pool;
      pool.reserve(res.visited.size() + g.adjacency[node].size());
      for (ItemId v : res.visited) {
        if (v != node) pool.emplace_back(v, dist(node, v));
      }
      for (ItemId v : g.adjacency[node]) {
        if (v != node) pool.emplace_back(v, dist(node, v));
      }
      g.adjacency[node] =
          robust_prune(node, std::move(pool), alpha, params.max_degree, dist);

      for (ItemId nbr : g.adjacency[node]) {
        auto& back = g.adjacency[nbr];
        if (std::find(back.begin(), back.end(), node) != back.end()) {
          continue;
        }
        back.push_back(node);
        if (back.size() > params.max_degree) {
          std::vector<std::pair<ItemId, double>> overflow;
          overflow.reserve(back.size());
          for (ItemId v : back) {
            overflow.emplace_back(v, dist(nbr, v));
          }
          g.adjacency[nbr] = robust_prune(nbr, std::move(overflow), alpha,
                                          params.max_degree, dist);
        }
      }
    }
  }

  ensure_reachable(g, vectors);
  return g;
}

std::vector<ItemId> reachable_from_entry(const VamanaGraph& g) {
  std::vector<ItemId> out;
  if (g.size() == 0) return out;
  std::vector<std::uint8_t> seen(g.size(), 0);
  std::deque<ItemId> frontier{g.entry_point};
  seen[g.entry_point] = 1;
  while (!frontier.empty()) {
    const ItemId cur = frontier.front();
    frontier.pop_front();
    out.push_back(cur);
    for (ItemId nbr : g.adjacency[cur]) {
      if (!seen[nbr]) {
        seen[nbr] = 1;
        frontier.push_back(nbr);
      }
    }
  }
  return out;
}

}  // namespace ebr
