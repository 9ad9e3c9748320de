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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ebr/rerank.hpp"
#include "ebr/search.hpp"
#include "ebr/trainer.hpp"

namespace ebr {

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

/// 1 iff the clicked ad appears among the first k retrieved items.
double hit_at_k(const std::vector<ItemId>& retrieved, ItemId clicked,
                std::size_t k);

/// Mean teacher relevance over the first k (or fewer) items. Errors on an
/// empty list.
double rel_at_k(const std::vector<ItemId>& retrieved,
                const std::function<double(ItemId)>& relevance, std::size_t k);

/// |retrieved_k ∩ truth_k| / k.
double recall_at_k(const std::vector<ItemId>& retrieved,
                   const std::vector<ItemId>& truth, std::size_t k);

/// NDCG with per-item gains and 1/log2(rank+1) discounting, normalized by the
/// ideal top-k gain ordering. `ideal_gains` must be the k largest gains in
/// descending order; errors when empty.
double ndcg_at_k(const std::vector<ItemId>& retrieved,
                 const std::function<double(ItemId)>& gain,
                 const std::vector<double>& ideal_gains, std::size_t k);

/// Binary-gain NDCG against a relevant set.
double ndcg_binary_at_k(const std::vector<ItemId>& retrieved,
                        const std::unordered_set<ItemId>& relevant,
                        std::size_t k);

/// 1/rank of the first retrieved member of the relevant set, 0 if absent.
double mrr(const std::vector<ItemId>& retrieved,
           const std::unordered_set<ItemId>& relevant);

struct MetricReport {
  std::map<std::size_t, double> hit_at;
  std::map<std::size_t, double> rel_at;
  std::map<std::size_t, double> recall_at;
  std::optional<double> ndcg;
  std::optional<double> mrr;
};

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

struct WorldConfig {
  std::uint32_t topic_count = 32;
  std::uint32_t topic_dim = 16;
  std::uint32_t ad_count = 10000;
  std::uint32_t train_query_count = 4000;
  std::uint32_t test_query_count = 500;
  std::uint32_t click_count = 20000;
  double gamma = 6.0;         // relevance steepness
  double noise_sigma = 0.05;  // per-pair relevance noise
  std::uint32_t tokens_per_topic = 40;
  std::uint32_t shard_stripes = 4;  // shard column of the click TSV
  double topical_exposure = 0.7;    // share of topically-biased impressions
  double bid_mu = 0.0;
  double bid_sigma = 0.5;
};

// Convex combination of at most two topics.
struct TopicMix {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
  double first_weight = 1.0;  // second gets 1 - first_weight
};

struct WorldAd {
  TopicMix mix;
  double popularity = 0.0;  // in [0, 1]
  double bid = 1.0;
  std::string text;
};

struct WorldQuery {
  TopicMix mix;
  std::string text;
  ItemId clicked = kNoNeighbor;  // planted click (always set for test queries)
  bool test = false;
};

struct WorldClick {
  std::uint64_t query = 0;  // index into queries
  ItemId ad = 0;
  std::uint32_t shard = 0;
};

// Planted-relevance world: relevance(q, a) = sigmoid(gamma * <mix_q, mix_a>
// + noise), click probability = relevance * (0.3 + 0.7 * popularity), clicks
// sampled Bernoulli under a topically biased exposure distribution.
class SyntheticWorld {
 public:
  WorldConfig cfg;
  std::vector<Embedding> topics;
  std::vector<WorldAd> ads;
  std::vector<WorldQuery> queries;  // train queries first, then test
  std::vector<WorldClick> clicks;
  std::uint64_t noise_salt = 0;

  /// Deterministic under the rng seed. Requires at least 200 ads.
  static SyntheticWorld generate(const WorldConfig& cfg, Rng& rng);

  Embedding mix_vector(const TopicMix& mix) const;
  double topic_affinity(const TopicMix& q, const TopicMix& a) const;
  double relevance(std::uint64_t query_idx, ItemId ad_idx) const;
  double click_prob(std::uint64_t query_idx, ItemId ad_idx) const;
  RankInputs rank_inputs(std::uint64_t query_idx, ItemId ad_idx) const;
  double psi_score(std::uint64_t query_idx, ItemId ad_idx) const;

  std::size_t train_query_count() const { return cfg.train_query_count; }
  std::vector<std::uint64_t> test_query_indices() const;

  std::vector<std::string> ad_texts() const;
  std::vector<ClickRecord> click_records() const;

  /// Relevance on the sigmoid scale before noise, exposed for tests.
  static double planted_relevance(double affinity, double gamma, double noise);
};

void save_world(const SyntheticWorld& world, const std::filesystem::path& path);
SyntheticWorld load_world(const std::filesystem::path& path);

/// Emits corpus.tsv, queries.tsv, clicks.tsv, teacher_scores.tsv and
/// rank_source.tsv (covering each test query's topical neighborhood plus a
/// random sample) into `dir`.
void write_world_tsvs(const SyntheticWorld& world,
                      const std::filesystem::path& dir);

// Ground-truth teacher over the planted world, keyed by text.
class PlantedTeacher final : public Teacher {
 public:
  explicit PlantedTeacher(const SyntheticWorld& world);
  double score(const std::string& query, const std::string& ad) const override;

 private:
  const SyntheticWorld* world_;
  std::map<std::string, std::uint64_t> query_by_text_;
  std::map<std::string, std::uint64_t> ad_by_text_;
};

class PlantedRankSource final : public RankSource {
 public:
  explicit PlantedRankSource(const SyntheticWorld& world) : world_(&world) {}
  RankInputs get(ItemId query_id, ItemId ad_id) const override {
    return world_->rank_inputs(query_id, ad_id);
  }

 private:
  const SyntheticWorld* world_;
};

// ---------------------------------------------------------------------------
// Experiment ladder
// ---------------------------------------------------------------------------

enum class Rung {
  baseline,      // 10 random negatives, no distillation, one shared head
  multi_obj,     // + distillation
  disentangle,   // + separate rel/ctr heads
  in_batch,      // + in-batch negatives (1 shard)
  cross_device,  // + cross-shard negatives (4 shards)
  ann_negative,  // + 1 ANN hard negative per query
  score_filter,  // + relevance-score filter on hard negatives
  rank_filter,   // + relevance-rank filter on hard negatives
};

const char* rung_name(Rung rung);
std::vector<Rung> all_rungs();

struct LadderConfig {
  EncoderConfig encoder;
  std::uint32_t epochs = 2;
  std::uint32_t base_batch = 16;
  std::uint32_t cross_shards = 4;
  double learning_rate = 0.5;
  double lambda_rel = 1.0;
  double temperature = 0.05;
  std::uint32_t random_negatives = 10;
  std::vector<std::size_t> eval_ks = {10, 100, 200};
  std::uint64_t seed = 1;
  bool log_progress = false;
};

EncoderConfig rung_encoder_config(Rung rung, const LadderConfig& cfg);
TrainConfig rung_train_config(Rung rung, const LadderConfig& cfg);

struct LadderRow {
  std::string method;
  MetricReport metrics;
};

/// Brute-force retrieval over the serving embeddings for every test query.
MetricReport evaluate_encoder(const SyntheticWorld& world, const Encoder& enc,
                              const std::vector<std::size_t>& ks);

/// Trains and evaluates every rung in order. A failing stage aborts with the
/// rung name.
std::vector<LadderRow> run_ladder(const SyntheticWorld& world,
                                  const LadderConfig& cfg);

void write_ladder_tsv(const std::vector<LadderRow>& rows,
                      const std::vector<std::size_t>& ks,
                      const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Index benchmarking
// ---------------------------------------------------------------------------

// Cost model for the emulated SSD: latency is derived from deterministic
// work counters so benchmark files are reproducible byte-for-byte.
inline constexpr double kSectorReadMicros = 100.0;
inline constexpr double kPqEvalMicros = 0.01;
inline constexpr double kExactEvalMicros = 0.2;

double modeled_latency_micros(const SearchStats& stats);

struct BenchRow {
  std::string method;
  std::map<std::size_t, double> recall_at;  // 100 / 500 / 1000
  double sector_reads_per_query = 0.0;
  double p50_micros = 0.0;
  double p95_micros = 0.0;
};

/// Runs the two-step search at each queue size and reports recalls against
/// exact MIPS over the stored vectors.
std::vector<BenchRow> bench_index(const TierOne& tier1,
                                  const std::filesystem::path& postings,
                                  const std::vector<Embedding>& queries,
                                  const std::vector<std::size_t>& queue_sizes,
                                  const std::vector<std::size_t>& recall_ks);

/// Code-only first-stage recall: top-k by ADC score over all codes against
/// exact MIPS top-k over the stored vectors, averaged over the queries.
double code_recall_at_k(const TierOne& tier1,
                        const std::vector<std::vector<float>>& vectors,
                        const std::vector<Embedding>& queries, std::size_t k);

/// Loads every stored vector from a posting file (rank order).
std::vector<std::vector<float>> load_all_vectors(
    const std::filesystem::path& postings);

}  // namespace ebr
