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
#include <filesystem>
#include <string>
#include <vector>

#include "ebr/search.hpp"
#include "ebr/trainer.hpp"

namespace ebr {

struct RankInputs {
  double ctr = 0.0;  // in [0, 1]
  double rel = 0.0;  // in [0, 1]
  double bid = 0.0;  // > 0
};

/// Business ranking combiner stand-in: ctr * rel * ln(1 + bid).
/// Strictly increasing in each argument; throws on out-of-range inputs.
double psi(const RankInputs& x);

class RankSource {
 public:
  virtual ~RankSource() = default;
  virtual RankInputs get(ItemId query_id, ItemId ad_id) const = 0;
};

// rank_source TSV rows: query_id \t ad_id \t ctr \t rel \t bid.
// Missing pairs are an error (the planted in-process source never misses).
class TsvRankSource final : public RankSource {
 public:
  explicit TsvRankSource(const std::filesystem::path& path);
  RankInputs get(ItemId query_id, ItemId ad_id) const override;

 private:
  std::map<std::pair<ItemId, ItemId>, RankInputs> rows_;
};

struct RankedItem {
  ItemId id = kNoNeighbor;
  double score = 0.0;
};

struct RankedList {
  std::vector<RankedItem> items;  // descending
  std::uint64_t psi_evals = 0;    // query-time evaluations of psi
  SearchStats search_stats;
};

/// Conventional pipeline: coarse search + post-verification with the serving
/// embeddings, then the retrieved candidates re-scored by psi and re-sorted
/// (stable, so psi ties keep the post-verification order).
RankedList tri_stage(const TierOne& tier1, PostingReader& reader,
                     ItemId query_id, const Embedding& query_serving,
                     const SearchParams& params, const RankSource& ranks);

/// Post-verification order without the re-rank pass (the "Base" pipeline).
RankedList base_stage(const TierOne& tier1, PostingReader& reader,
                      const Embedding& query_serving,
                      const SearchParams& params);

/// Optimized pipeline over an adapted index: routing on the serving-space
/// codes, post-verification against rank-head tier-two vectors. The output
/// is final; psi is never evaluated at query time.
RankedList bi_stage(const TierOne& tier1, PostingReader& adapted_reader,
                    const Embedding& query_serving,
                    const Embedding& query_rank, const SearchParams& params);

struct AdaptConfig {
  std::uint32_t epochs = 8;
  double learning_rate = 0.05;
  std::size_t head_sample = 50;   // top of the first-stage list
  std::size_t tail_sample = 50;   // uniform from the remaining ranks
  SearchParams first_stage{/*k=*/64, /*queue_size=*/64, /*beam_width=*/4};
  bool train_backbone = false;
  std::uint64_t seed = 1;
};

struct AdaptReport {
  std::size_t queries_used = 0;
  std::size_t queries_skipped = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

struct AdaptQuery {
  ItemId id = kNoNeighbor;
  std::string text;
};

/// Rank-head adaptation: for each query, candidates are sampled from its
/// first-stage retrieval, psi targets are min-max normalized per query to
/// [0, 1], and the squared error against raw rank-head inner products is
/// minimized w.r.t. the rank head (optionally the backbone). Queries with
/// fewer than 2 candidates, or a degenerate psi range, are skipped with a
/// warning.
AdaptReport adapt_to_rank(Encoder& enc, const TierOne& tier1,
                          PostingReader& reader,
                          const std::vector<AdaptQuery>& queries,
                          const std::vector<std::string>& ad_texts,
                          const RankSource& ranks, const AdaptConfig& cfg);

/// Squared-error regression loss for one query's candidate set against fixed
/// targets, with gradients; shared by adapt_to_rank and its gradient check.
double rank_regression_loss(const Encoder& enc, const std::string& query_text,
                            const std::vector<std::string>& candidate_texts,
                            const std::vector<double>& targets,
                            EncoderGrad* grad, double scale = 1.0);

/// Rewrites an index directory with tier-two vectors from the rank head,
/// keeping the tier-one codes and graph byte-identical (routing unchanged).
void write_adapted_index(const std::filesystem::path& src_dir,
                         const std::filesystem::path& dst_dir,
                         const Encoder& enc,
                         const std::vector<std::string>& ad_texts);

}  // namespace ebr
