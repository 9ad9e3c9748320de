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

#include "ebr/search.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace ebr {

void SearchParams::validate() const {
  if (k == 0 || k > queue_size) {
    throw std::invalid_argument("SearchParams: need 1 <= k <= queue_size");
  }
  if (beam_width == 0) {
    throw std::invalid_argument("SearchParams: beam_width must be > 0");
  }
}

namespace {

struct QueueEntry {
  double score;
  std::uint64_t rank;
  bool visited;
};

bool queue_order(const QueueEntry& a, const QueueEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.rank < b.rank;
}

double exact_ip(const Embedding& q, const std::vector<float>& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += q[i] * static_cast<double>(v[i]);
  }
  return acc;
}

}  // namespace

SearchResult search(const TierOne& tier1, PostingReader& reader,
                    const Embedding& query, const SearchParams& params) {
  return search(tier1, reader, query, query, params);
}

SearchResult search(const TierOne& tier1, PostingReader& reader,
                    const Embedding& route, const Embedding& verify,
                    const SearchParams& params) {
  params.validate();
  if (tier1.count != reader.count()) {
    throw std::invalid_argument(
        "search: tier-one and posting-list sizes disagree");
  }
  if (route.size() != reader.dim() || verify.size() != reader.dim()) {
    throw std::invalid_argument("search: query dimension mismatch");
  }

  SearchResult result;
  const std::uint64_t sectors_before = reader.sector_reads();
  const AdcTable adc = build_adc(tier1.codebook, route);

  std::vector<QueueEntry> queue;
  queue.reserve(params.queue_size + 1);
  std::vector<std::uint8_t> scored(reader.count(), 0);
  std::unordered_map<std::uint64_t, std::vector<float>> vector_cache;
  PqCode code(tier1.codebook.sub_count);

  auto push = [&](std::uint64_t rank) {
    if (scored[rank]) return;
    scored[rank] = 1;
    const auto bytes = tier1.code(rank);
    std::copy(bytes.begin(), bytes.end(), code.begin());
    result.stats.pq_evals++;
    QueueEntry entry{approx_ip(adc, code), rank, false};
    auto it = std::lower_bound(queue.begin(), queue.end(), entry, queue_order);
    if (queue.size() == params.queue_size) {
      if (it == queue.end()) return;
      queue.pop_back();
      it = std::lower_bound(queue.begin(), queue.end(), entry, queue_order);
    }
    queue.insert(it, entry);
  };

  push(reader.entry_rank());
  for (;;) {
    // One hop: fetch up to beam_width best unvisited candidates together.
    std::vector<std::uint64_t> beam;
    for (QueueEntry& e : queue) {
      if (e.visited) continue;
      e.visited = true;
      beam.push_back(e.rank);
      if (beam.size() == params.beam_width) break;
    }
    if (beam.empty()) break;
    result.stats.hops++;
    for (std::uint64_t rank : beam) {
      PostingRecord rec = reader.read_record(rank);
      vector_cache.emplace(rank, std::move(rec.vector));
      for (ItemId nbr : rec.neighbors) {
        const auto nbr_rank = reader.rank_of(nbr);
        if (!nbr_rank.has_value()) {
          throw std::runtime_error("search: record references unknown id " +
                                   std::to_string(nbr));
        }
        push(*nbr_rank);
      }
    }
  }

  // Post-verification: every queue member was visited, so its full vector is
  // already cached and this phase costs no additional I/O.
  result.items.reserve(queue.size());
  for (const QueueEntry& e : queue) {
    const auto it = vector_cache.find(e.rank);
    if (it == vector_cache.end()) {
      throw std::runtime_error("search: queue member missing from cache");
    }
    result.stats.exact_evals++;
    result.items.push_back(SearchHit{reader.id_of(e.rank),
                                     exact_ip(verify, it->second)});
  }
  std::sort(result.items.begin(), result.items.end(),
            [](const SearchHit& a, const SearchHit& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.id < b.id;
            });
  if (result.items.size() > params.k) {
    result.items.resize(params.k);
  }
  result.stats.sector_reads = reader.sector_reads() - sectors_before;
  return result;
}

namespace {

template <class Corpus, class Score>
std::vector<SearchHit> brute_force_impl(const Corpus& corpus, Score&& score,
                                        std::size_t k) {
  if (k > corpus.size()) {
    throw std::invalid_argument("brute_force: k exceeds corpus size");
  }
  std::vector<SearchHit> hits(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    hits[i] = SearchHit{static_cast<ItemId>(i), score(i)};
  }
  std::partial_sort(hits.begin(), hits.begin() + k, hits.end(),
                    [](const SearchHit& a, const SearchHit& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.id < b.id;
                    });
  hits.resize(k);
  return hits;
}

}  // namespace

std::vector<SearchHit> brute_force(const std::vector<Embedding>& corpus,
                                   const Embedding& query, std::size_t k) {
  return brute_force_impl(
      corpus, [&](std::size_t i) { return inner_product(corpus[i], query); },
      k);
}

std::vector<SearchHit> brute_force(
    const std::vector<std::vector<float>>& corpus, const Embedding& query,
    std::size_t k) {
  return brute_force_impl(
      corpus,
      [&](std::size_t i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < corpus[i].size(); ++j) {
          acc += query[j] * static_cast<double>(corpus[i][j]);
        }
        return acc;
      },
      k);
}

double recall_against(const std::vector<SearchHit>& got,
                      const std::vector<SearchHit>& truth, std::size_t k) {
  std::unordered_set<ItemId> want;
  for (std::size_t i = 0; i < std::min(k, truth.size()); ++i) {
    want.insert(truth[i].id);
  }
  if (want.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, got.size()); ++i) {
    if (want.count(got[i].id) != 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(want.size());
}

}  // namespace ebr
