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
#include <string>
#include <string_view>
#include <vector>

#include "ebr/core.hpp"

namespace ebr {

// Sorted sparse feature vector (index, value), produced by token hashing.
struct SparseVec {
  std::vector<std::pair<std::uint32_t, double>> entries;
};

// Whitespace tokenizer + FNV-1a bucket hashing, L2-normalized counts. Text
// that tokenizes to nothing maps to the reserved bucket 0.
class Featurizer {
 public:
  explicit Featurizer(std::uint32_t dim = 1u << 15) : dim_(dim) {}
  SparseVec featurize(std::string_view text) const;
  std::uint32_t dim() const { return dim_; }

 private:
  std::uint32_t dim_;
};

enum class Head { rel, ctr, rank };

struct EncoderConfig {
  std::uint32_t feature_dim = 1u << 15;  // F
  std::uint32_t hidden_dim = 256;        // h
  std::uint32_t backbone_dim = 128;      // d_raw
  std::uint32_t embed_dim = 64;          // d
  // One pooling head serves both objectives (the pre-disentangle setup);
  // rel lookups resolve to the ctr matrix.
  bool share_heads = false;
};

// Text encoder: hashing featurizer, one tanh hidden layer, linear backbone
// output, and three pooling heads over the shared backbone. All parameters
// are 64-bit so analytic gradients can be checked against finite differences.
struct Encoder {
  EncoderConfig cfg;
  Featurizer featurizer;
  std::vector<double> w1;  // hidden x F, column-major: w1[col * hidden + row]
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // backbone x hidden, row-major
  std::vector<double> b2;  // backbone
  std::vector<double> w_rel;   // embed x backbone, row-major
  std::vector<double> w_ctr;   // embed x backbone
  std::vector<double> w_rank;  // embed x backbone

  static Encoder init(const EncoderConfig& cfg, Rng& rng);

  struct Activations {
    SparseVec input;
    std::vector<double> hidden;    // tanh output
    std::vector<double> backbone;  // shared representation fed to the heads
  };

  Activations backbone_forward(std::string_view text) const;
  Embedding head_forward(const Activations& act, Head head) const;
  Embedding embed(Head head, std::string_view text) const;
  Embedding embed_rel(std::string_view t) const { return embed(Head::rel, t); }
  Embedding embed_ctr(std::string_view t) const { return embed(Head::ctr, t); }
  Embedding embed_rank(std::string_view t) const {
    return embed(Head::rank, t);
  }

  /// Serving vector: the normalized rel and ctr embeddings added up.
  /// Throws if either head output is the zero vector.
  Embedding serving_embedding(std::string_view text) const;

  const std::vector<double>& head_matrix(Head head) const;
  std::size_t param_count() const;
};

// Gradient accumulator matching Encoder's shapes. The first-layer gradient is
// kept sparse by column since a batch touches a tiny fraction of the hashing
// buckets.
struct EncoderGrad {
  std::uint32_t hidden_dim = 0;
  std::map<std::uint32_t, std::vector<double>> w1_cols;
  std::vector<double> b1, w2, b2, w_rel, w_ctr, w_rank;

  explicit EncoderGrad(const EncoderConfig& cfg);
  void accumulate(const EncoderGrad& other);
  std::vector<double>& head_grad(const EncoderConfig& cfg, Head head);
};

/// Reverse-mode step from d(loss)/d(head embedding) into parameter space.
void backprop_head(const Encoder& enc, const Encoder::Activations& act,
                   Head head, const std::vector<double>& d_embed,
                   EncoderGrad& grad);

// Flat view over all parameters, ordered (w1, b1, w2, b2, w_rel, w_ctr,
// w_rank). Used by finite-difference checks and the SGD update.
namespace params {
std::size_t count(const Encoder& enc);
double get(const Encoder& enc, std::size_t index);
void set(Encoder& enc, std::size_t index, double value);
double grad_at(const Encoder& enc, const EncoderGrad& grad, std::size_t index);
/// Indices with (potentially) nonzero gradient entries, for sampling in
/// gradient checks.
std::vector<std::size_t> touched_indices(const Encoder& enc,
                                         const EncoderGrad& grad);
}  // namespace params

struct LossConfig {
  double lambda_rel = 1.0;     // weight of the distillation term
  double temperature = 0.05;   // softmax scale on contrastive similarities
  bool include_positive = true;  // positive term in the InfoNCE denominator
  bool normalize_similarity = true;  // unit-normalized head outputs; false
                                     // uses raw inner products
  bool absolute_error = false;  // distillation |r| instead of r^2
};

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual double score(const std::string& query,
                       const std::string& ad) const = 0;
};

// Scores loaded from a TSV of (query_id, ad_id, score); texts are resolved
// through the supplied id maps. Missing pairs are an error.
class TsvTeacher final : public Teacher {
 public:
  TsvTeacher(const std::filesystem::path& scores_tsv,
             std::map<std::string, std::uint64_t> query_ids,
             std::map<std::string, std::uint64_t> ad_ids);
  double score(const std::string& query,
               const std::string& ad) const override;

 private:
  std::map<std::string, std::uint64_t> query_ids_;
  std::map<std::string, std::uint64_t> ad_ids_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, double> scores_;
};

/// Squared (or absolute) error between the teacher score and the rel-head
/// similarity. Loss and gradients are scaled by `scale`.
double distill_loss(const Encoder& enc, double teacher_score,
                    const std::string& query, const std::string& ad,
                    const LossConfig& cfg, EncoderGrad* grad,
                    double scale = 1.0);

/// Softmax cross-entropy over {positive} ∪ negatives on ctr-head
/// similarities divided by the temperature.
double infonce_loss(const Encoder& enc, const std::string& query,
                    const std::string& positive,
                    const std::vector<std::string>& negatives,
                    const LossConfig& cfg, EncoderGrad* grad,
                    double scale = 1.0);

struct Triplet {
  std::string query;
  std::string positive;
  std::vector<std::string> hard_negatives;  // at most 4
  std::uint32_t shard = 0;
};

struct TrainBatch {
  std::vector<Triplet> triplets;
};

struct ShardedStepDebug {
  std::vector<std::size_t> denominator_terms;  // per query
};

/// Emulated cross-device contrastive step. Each shard encodes its own
/// triplets; embeddings are then shared globally, every query scores every ad
/// (other queries' positives plus all hard negatives act as its negatives),
/// and per-shard gradients — flowing only into locally encoded embeddings —
/// are summed, which reconstructs the monolithic full-batch gradient.
/// Returns the mean InfoNCE loss over the batch.
double sharded_contrastive_step(const Encoder& enc, const TrainBatch& batch,
                                std::uint32_t shard_count,
                                const LossConfig& cfg, EncoderGrad* grad,
                                ShardedStepDebug* debug = nullptr);

enum class NegativeFilter { none, score, rank };

// Filter helpers over the teacher scores of a retrieved neighborhood; exposed
// separately so the selection rules are unit-testable.
std::vector<std::size_t> score_filter_eligible(
    const std::vector<double>& scores);  // score < 0.5
std::vector<std::size_t> rank_filter_eligible(
    const std::vector<double>& scores);  // relevance rank > 100 of the list

struct MiningPool {
  // Most-similar-first ad ids for a query text.
  std::function<std::vector<ItemId>(const std::string& query, std::size_t k)>
      topk;
  const std::vector<std::string>* ad_texts = nullptr;  // indexed by ItemId
};

/// Samples up to n hard negatives from the query's Top-200 neighborhood,
/// never returning the clicked positive. score mode keeps ads with teacher
/// relevance < 0.5 and falls back to rank mode when none qualify (logged);
/// rank mode samples from the lower half of the relevance-sorted list.
std::vector<std::string> mine_hard_negatives(
    const MiningPool& pool, const Teacher& teacher, const std::string& query,
    const std::string& positive, NegativeFilter mode, std::size_t n, Rng& rng,
    bool* fell_back = nullptr);

struct ClickRecord {
  std::string query;
  std::string positive;
  std::uint32_t shard = 0;
};

struct TrainConfig {
  std::uint32_t epochs = 3;
  std::uint32_t batch_size = 16;  // triplets per step across all shards
  std::uint32_t shard_count = 1;
  double learning_rate = 0.5;
  double momentum = 0.0;
  bool in_batch_negatives = true;
  std::uint32_t random_negatives = 10;  // used when !in_batch_negatives
  std::uint32_t hard_negatives = 0;     // ANN negatives per query, <= 4
  NegativeFilter filter = NegativeFilter::none;
  std::uint32_t refresh_every = 1;  // epochs between hard-negative refreshes
  std::uint64_t seed = 1;
  LossConfig loss;
  bool log_progress = false;
};

/// Joint training: contrastive loss over clicks plus lambda_rel times the
/// distillation loss on (query, clicked ad) pairs, plain SGD with optional
/// momentum, hard negatives refreshed from a brute-force index. Aborts with
/// the step number if the loss stops being finite.
Encoder train(const std::vector<ClickRecord>& clicks,
              const std::vector<std::string>& ad_corpus, const Teacher& teacher,
              const EncoderConfig& enc_cfg, const TrainConfig& cfg,
              std::vector<double>* loss_trace = nullptr);

/// SGD application shared by train / MoPQ / adaptation paths.
void apply_gradient(Encoder& enc, const EncoderGrad& grad,
                    double learning_rate);

// Model file: magic "UREN", version u32, F, h, d_raw, d (u32 each),
// flags u32 (bit0 = share_heads), then w1, b1, w2, b2, w_rel, w_ctr, w_rank
// row-major little-endian f32.
void save_encoder(const Encoder& enc, const std::filesystem::path& path);
Encoder load_encoder(const std::filesystem::path& path);

}  // namespace ebr
