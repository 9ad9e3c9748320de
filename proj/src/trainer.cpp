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

#include "ebr/trainer.hpp"

#include "ebr/search.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "ebr/serialize.hpp"

namespace ebr {

SparseVec Featurizer::featurize(std::string_view text) const {
  std::map<std::uint32_t, double> counts;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::size_t start = i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    if (i > start) {
      const std::uint32_t bucket =
          static_cast<std::uint32_t>(hash_text(text.substr(start, i - start)) %
                                     dim_);
      counts[bucket] += 1.0;
    }
  }
  if (counts.empty()) {
    counts[0] = 1.0;  // reserved empty-feature bucket
  }
  double norm = 0.0;
  for (const auto& [idx, v] : counts) norm += v * v;
  norm = std::sqrt(norm);
  SparseVec out;
  out.entries.reserve(counts.size());
  for (const auto& [idx, v] : counts) {
    out.entries.emplace_back(idx, v / norm);
  }
  return out;
}

Encoder Encoder::init(const EncoderConfig& cfg, Rng& rng) {
  Encoder enc;
  enc.cfg = cfg;
  enc.featurizer = Featurizer(cfg.feature_dim);
  const std::size_t f = cfg.feature_dim;
  const std::size_t h = cfg.hidden_dim;
  const std::size_t b = cfg.backbone_dim;
  const std::size_t d = cfg.embed_dim;

  auto fill = [&](std::vector<double>& w, std::size_t n, double sigma) {
    w.resize(n);
    for (double& v : w) v = rng.normal(0.0, sigma);
  };
  fill(enc.w1, f * h, 1.0);
  enc.b1.assign(h, 0.0);
  fill(enc.w2, b * h, 1.0 / std::sqrt(static_cast<double>(h)));
  enc.b2.assign(b, 0.0);
  fill(enc.w_rel, d * b, 1.0 / std::sqrt(static_cast<double>(b)));
  fill(enc.w_ctr, d * b, 1.0 / std::sqrt(static_cast<double>(b)));
  fill(enc.w_rank, d * b, 1.0 / std::sqrt(static_cast<double>(b)));
  return enc;
}

const std::vector<double>& Encoder::head_matrix(Head head) const {
  switch (head) {
    case Head::rel:
      return cfg.share_heads ? w_ctr : w_rel;
    case Head::ctr:
      return w_ctr;
    case Head::rank:
      return w_rank;
  }
  throw std::logic_error("unknown head");
}

Encoder::Activations Encoder::backbone_forward(std::string_view text) const {
  Activations act;
  act.input = featurizer.featurize(text);
  const std::size_t h = cfg.hidden_dim;
  act.hidden.assign(h, 0.0);
  for (const auto& [col, val] : act.input.entries) {
    const double* w = w1.data() + static_cast<std::size_t>(col) * h;
    for (std::size_t r = 0; r < h; ++r) {
      act.hidden[r] += w[r] * val;
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    act.hidden[r] = std::tanh(act.hidden[r] + b1[r]);
  }
  const std::size_t b = cfg.backbone_dim;
  act.backbone.assign(b, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    const double* w = w2.data() + r * h;
    double acc = b2[r];
    for (std::size_t c = 0; c < h; ++c) {
      acc += w[c] * act.hidden[c];
    }
    act.backbone[r] = acc;
  }
  return act;
}

Embedding Encoder::head_forward(const Activations& act, Head head) const {
  const std::vector<double>& w = head_matrix(head);
  const std::size_t b = cfg.backbone_dim;
  const std::size_t d = cfg.embed_dim;
  Embedding out(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double* row = w.data() + r * b;
    double acc = 0.0;
    for (std::size_t c = 0; c < b; ++c) {
      acc += row[c] * act.backbone[c];
    }
    out[r] = acc;
  }
  return out;
}

Embedding Encoder::embed(Head head, std::string_view text) const {
  return head_forward(backbone_forward(text), head);
}

Embedding Encoder::serving_embedding(std::string_view text) const {
  const Activations act = backbone_forward(text);
  const Embedding rel = head_forward(act, Head::rel);
  const Embedding ctr = head_forward(act, Head::ctr);
  if (l2_norm(rel) == 0.0 || l2_norm(ctr) == 0.0) {
    throw std::invalid_argument(
        "serving_embedding: a head produced the zero vector");
  }
  Embedding out = l2_normalize(rel);
  const Embedding ctr_n = l2_normalize(ctr);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += ctr_n[i];
  }
  return out;
}

std::size_t Encoder::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w_rel.size() +
         w_ctr.size() + w_rank.size();
}

EncoderGrad::EncoderGrad(const EncoderConfig& cfg)
    : hidden_dim(cfg.hidden_dim),
      b1(cfg.hidden_dim, 0.0),
      w2(static_cast<std::size_t>(cfg.backbone_dim) * cfg.hidden_dim, 0.0),
      b2(cfg.backbone_dim, 0.0),
      w_rel(static_cast<std::size_t>(cfg.embed_dim) * cfg.backbone_dim, 0.0),
      w_ctr(static_cast<std::size_t>(cfg.embed_dim) * cfg.backbone_dim, 0.0),
      w_rank(static_cast<std::size_t>(cfg.embed_dim) * cfg.backbone_dim, 0.0) {
}

void EncoderGrad::accumulate(const EncoderGrad& other) {
  for (const auto& [col, vals] : other.w1_cols) {
    auto [it, inserted] = w1_cols.try_emplace(col, vals);
    if (!inserted) {
      for (std::size_t i = 0; i < vals.size(); ++i) it->second[i] += vals[i];
    }
  }
  auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  add(b1, other.b1);
  add(w2, other.w2);
  add(b2, other.b2);
  add(w_rel, other.w_rel);
  add(w_ctr, other.w_ctr);
  add(w_rank, other.w_rank);
}

std::vector<double>& EncoderGrad::head_grad(const EncoderConfig& cfg,
                                            Head head) {
  switch (head) {
    case Head::rel:
      return cfg.share_heads ? w_ctr : w_rel;
    case Head::ctr:
      return w_ctr;
    case Head::rank:
      return w_rank;
  }
  throw std::logic_error("unknown head");
}

void backprop_head(const Encoder& enc, const Encoder::Activations& act,
                   Head head, const std::vector<double>& d_embed,
                   EncoderGrad& grad) {
  const std::size_t h = enc.cfg.hidden_dim;
  const std::size_t b = enc.cfg.backbone_dim;
  const std::size_t d = enc.cfg.embed_dim;
  const std::vector<double>& w_head = enc.head_matrix(head);
  std::vector<double>& g_head = grad.head_grad(enc.cfg, head);

  std::vector<double> d_backbone(b, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    const double g = d_embed[r];
    if (g == 0.0) continue;
    const double* row = w_head.data() + r * b;
    double* grow = g_head.data() + r * b;
    for (std::size_t c = 0; c < b; ++c) {
      grow[c] += g * act.backbone[c];
      d_backbone[c] += g * row[c];
    }
  }

  std::vector<double> d_hidden(h, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    const double g = d_backbone[r];
    grad.b2[r] += g;
    if (g == 0.0) continue;
    const double* row = enc.w2.data() + r * h;
    double* grow = grad.w2.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) {
      grow[c] += g * act.hidden[c];
      d_hidden[c] += g * row[c];
    }
  }

  // tanh' = 1 - tanh^2
  for (std::size_t c = 0; c < h; ++c) {
    d_hidden[c] *= 1.0 - act.hidden[c] * act.hidden[c];
    grad.b1[c] += d_hidden[c];
  }
  for (const auto& [col, val] : act.input.entries) {
    auto [it, inserted] = grad.w1_cols.try_emplace(col);
    if (inserted) it->second.assign(h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
      it->second[r] += d_hidden[r] * val;
    }
  }
}

namespace params {

namespace {
struct Block {
  const std::vector<double>* data;
  std::size_t offset;
};

std::vector<Block> blocks(const Encoder& enc) {
  std::vector<Block> out;
  std::size_t off = 0;
  for (const std::vector<double>* v :
       {&enc.w1, &enc.b1, &enc.w2, &enc.b2, &enc.w_rel, &enc.w_ctr,
        &enc.w_rank}) {
    out.push_back({v, off});
    off += v->size();
  }
  return out;
}
}  // namespace

std::size_t count(const Encoder& enc) { return enc.param_count(); }

double get(const Encoder& enc, std::size_t index) {
  for (const Block& b : blocks(enc)) {
    if (index < b.offset + b.data->size()) {
      return (*b.data)[index - b.offset];
    }
  }
  throw std::out_of_range("params::get");
}

void set(Encoder& enc, std::size_t index, double value) {
  std::size_t off = 0;
  for (std::vector<double>* v : {&enc.w1, &enc.b1, &enc.w2, &enc.b2,
                                 &enc.w_rel, &enc.w_ctr, &enc.w_rank}) {
    if (index < off + v->size()) {
      (*v)[index - off] = value;
      return;
    }
    off += v->size();
  }
  throw std::out_of_range("params::set");
}

double grad_at(const Encoder& enc, const EncoderGrad& grad,
               std::size_t index) {
  const std::size_t h = enc.cfg.hidden_dim;
  if (index < enc.w1.size()) {
    const std::uint32_t col = static_cast<std::uint32_t>(index / h);
    const std::size_t row = index % h;
    auto it = grad.w1_cols.find(col);
    return it == grad.w1_cols.end() ? 0.0 : it->second[row];
  }
  std::size_t off = enc.w1.size();
  for (const std::vector<double>* v :
       {&grad.b1, &grad.w2, &grad.b2, &grad.w_rel, &grad.w_ctr,
        &grad.w_rank}) {
    if (index < off + v->size()) {
      return (*v)[index - off];
    }
    off += v->size();
  }
  throw std::out_of_range("params::grad_at");
}

std::vector<std::size_t> touched_indices(const Encoder& enc,
                                         const EncoderGrad& grad) {
  std::vector<std::size_t> out;
  const std::size_t h = enc.cfg.hidden_dim;
  for (const auto& [col, vals] : grad.w1_cols) {
    for (std::size_t r = 0; r < vals.size(); ++r) {
      out.push_back(static_cast<std::size_t>(col) * h + r);
    }
  }
  std::size_t off = enc.w1.size();
  for (const std::vector<double>* v :
       {&grad.b1, &grad.w2, &grad.b2, &grad.w_rel, &grad.w_ctr,
        &grad.w_rank}) {
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(off + i);
    }
    off += v->size();
  }
  return out;
}

}  // namespace params

TsvTeacher::TsvTeacher(const std::filesystem::path& scores_tsv,
                       std::map<std::string, std::uint64_t> query_ids,
                       std::map<std::string, std::uint64_t> ad_ids)
    : query_ids_(std::move(query_ids)), ad_ids_(std::move(ad_ids)) {
  std::ifstream in(scores_tsv);
  if (!in) {
    throw std::runtime_error("TsvTeacher: cannot open " + scores_tsv.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::uint64_t q, a;
    double s;
    if (!(ls >> q >> a >> s)) {
      throw std::runtime_error("TsvTeacher: malformed line: " + line);
    }
    scores_[{q, a}] = s;
  }
}

double TsvTeacher::score(const std::string& query,
                         const std::string& ad) const {
  auto qid = query_ids_.find(query);
  auto aid = ad_ids_.find(ad);
  if (qid == query_ids_.end() || aid == ad_ids_.end()) {
    throw std::runtime_error("TsvTeacher: unknown query or ad text");
  }
  auto it = scores_.find({qid->second, aid->second});
  if (it == scores_.end()) {
    throw std::runtime_error("TsvTeacher: no score for pair (" +
                             std::to_string(qid->second) + ", " +
                             std::to_string(aid->second) + ")");
  }
  return it->second;
}

namespace {

// d(loss)/d(raw) given y = raw/||raw|| and d(loss)/dy.
std::vector<double> normalize_backward(const Embedding& raw,
                                       const Embedding& unit,
                                       const std::vector<double>& d_unit) {
  const double norm = l2_norm(raw);
  double proj = 0.0;
  for (std::size_t i = 0; i < unit.size(); ++i) proj += unit[i] * d_unit[i];
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = (d_unit[i] - unit[i] * proj) / norm;
  }
  return out;
}

double logsumexp(const std::vector<double>& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace

double distill_loss(const Encoder& enc, double teacher_score,
                    const std::string& query, const std::string& ad,
                    const LossConfig& cfg, EncoderGrad* grad, double scale) {
  if (teacher_score < 0.0 || teacher_score > 1.0) {
    throw std::invalid_argument("distill_loss: teacher score outside [0, 1]");
  }
  const Encoder::Activations act_q = enc.backbone_forward(query);
  const Encoder::Activations act_a = enc.backbone_forward(ad);
  const Embedding raw_q = enc.head_forward(act_q, Head::rel);
  const Embedding raw_a = enc.head_forward(act_a, Head::rel);

  Embedding u = raw_q;
  Embedding v = raw_a;
  if (cfg.normalize_similarity) {
    u = l2_normalize(raw_q);
    v = l2_normalize(raw_a);
  }
  const double sim = inner_product(u, v);
  const double r = sim - teacher_score;
  const double loss = cfg.absolute_error ? std::abs(r) : r * r;
  if (grad != nullptr) {
    const double d_sim =
        scale * (cfg.absolute_error ? (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0))
                                    : 2.0 * r);
    std::vector<double> d_u(u.size()), d_v(v.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      d_u[i] = d_sim * v[i];
      d_v[i] = d_sim * u[i];
    }
    if (cfg.normalize_similarity) {
      d_u = normalize_backward(raw_q, u, d_u);
      d_v = normalize_backward(raw_a, v, d_v);
    }
    backprop_head(enc, act_q, Head::rel, d_u, *grad);
    backprop_head(enc, act_a, Head::rel, d_v, *grad);
  }
  return scale * loss;
}

double infonce_loss(const Encoder& enc, const std::string& query,
                    const std::string& positive,
                    const std::vector<std::string>& negatives,
                    const LossConfig& cfg, EncoderGrad* grad, double scale) {
  if (negatives.empty()) {
    throw std::invalid_argument("infonce_loss: need at least one negative");
  }
  const Encoder::Activations act_q = enc.backbone_forward(query);
  const Embedding raw_q = enc.head_forward(act_q, Head::ctr);
  const Embedding q_hat =
      cfg.normalize_similarity ? l2_normalize(raw_q) : raw_q;

  struct Side {
    Encoder::Activations act;
    Embedding raw;
    Embedding hat;
  };
  std::vector<Side> ads(1 + negatives.size());
  for (std::size_t j = 0; j < ads.size(); ++j) {
    const std::string& text = j == 0 ? positive : negatives[j - 1];
    ads[j].act = enc.backbone_forward(text);
    ads[j].raw = enc.head_forward(ads[j].act, Head::ctr);
    ads[j].hat =
        cfg.normalize_similarity ? l2_normalize(ads[j].raw) : ads[j].raw;
  }

  std::vector<double> logits(ads.size());
  for (std::size_t j = 0; j < ads.size(); ++j) {
    logits[j] = inner_product(q_hat, ads[j].hat) / cfg.temperature;
  }
  std::vector<double> denom(logits.begin() + (cfg.include_positive ? 0 : 1),
                            logits.end());
  const double lse = logsumexp(denom);
  const double loss = -logits[0] + lse;

  if (grad != nullptr) {
    std::vector<double> d_logit(ads.size(), 0.0);
    d_logit[0] = -scale;
    const std::size_t base = cfg.include_positive ? 0 : 1;
    for (std::size_t j = base; j < ads.size(); ++j) {
      d_logit[j] += scale * std::exp(logits[j] - lse);
    }
    std::vector<double> d_q(q_hat.size(), 0.0);
    for (std::size_t j = 0; j < ads.size(); ++j) {
      if (d_logit[j] == 0.0) continue;
      const double w = d_logit[j] / cfg.temperature;
      std::vector<double> d_a(q_hat.size());
      for (std::size_t i = 0; i < q_hat.size(); ++i) {
        d_q[i] += w * ads[j].hat[i];
        d_a[i] = w * q_hat[i];
      }
      if (cfg.normalize_similarity) {
        d_a = normalize_backward(ads[j].raw, ads[j].hat, d_a);
      }
      backprop_head(enc, ads[j].act, Head::ctr, d_a, *grad);
    }
    if (cfg.normalize_similarity) {
      d_q = normalize_backward(raw_q, q_hat, d_q);
    }
    backprop_head(enc, act_q, Head::ctr, d_q, *grad);
  }
  return scale * loss;
}

double sharded_contrastive_step(const Encoder& enc, const TrainBatch& batch,
                                std::uint32_t shard_count,
                                const LossConfig& cfg, EncoderGrad* grad,
                                ShardedStepDebug* debug) {
  if (shard_count == 0) {
    throw std::invalid_argument("sharded_contrastive_step: shard_count == 0");
  }
  const std::size_t b = batch.triplets.size();
  if (b == 0) {
    throw std::invalid_argument("sharded_contrastive_step: empty batch");
  }

  std::vector<std::vector<std::size_t>> by_shard(shard_count);
  for (std::size_t i = 0; i < b; ++i) {
    by_shard[batch.triplets[i].shard % shard_count].push_back(i);
  }
  for (std::uint32_t s = 0; s < shard_count; ++s) {
    if (by_shard[s].empty()) {
      throw std::invalid_argument("sharded_contrastive_step: shard " +
                                  std::to_string(s) + " has zero triplets");
    }
  }

  struct Encoded {
    std::uint32_t owner;
    Encoder::Activations act;
    Embedding raw;
    Embedding hat;
    std::vector<double> d_hat;
  };

  // Phase 1+2: shard-local encoding, then a global view of every embedding.
  // queries[i] pairs with ads[i] (its positive); hard negatives follow.
  std::vector<Encoded> queries(b);
  std::vector<Encoded> ads;
  ads.reserve(2 * b);
  auto encode_one = [&](std::uint32_t owner, const std::string& text) {
    Encoded e;
    e.owner = owner;
    e.act = enc.backbone_forward(text);
    e.raw = enc.head_forward(e.act, Head::ctr);
    e.hat = cfg.normalize_similarity ? l2_normalize(e.raw) : e.raw;
    e.d_hat.assign(e.raw.size(), 0.0);
    return e;
  };
  for (std::uint32_t s = 0; s < shard_count; ++s) {
    for (std::size_t i : by_shard[s]) {
      queries[i] = encode_one(s, batch.triplets[i].query);
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    ads.push_back(encode_one(queries[i].owner, batch.triplets[i].positive));
  }
  for (std::size_t i = 0; i < b; ++i) {
    for (const std::string& hn : batch.triplets[i].hard_negatives) {
      ads.push_back(encode_one(queries[i].owner, hn));
    }
  }
  const std::size_t n_ads = ads.size();

  // Phase 3: every query against every ad; the denominator holds the other
  // queries' positives and all shared hard negatives (plus the query's own
  // positive when configured).
  std::vector<double> logits(n_ads);
  double total_loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  if (debug != nullptr) debug->denominator_terms.assign(b, 0);

  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < n_ads; ++j) {
      logits[j] = inner_product(queries[i].hat, ads[j].hat) / cfg.temperature;
    }
    std::vector<double> denom;
    denom.reserve(n_ads);
    for (std::size_t j = 0; j < n_ads; ++j) {
      if (j == i && !cfg.include_positive) continue;
      if (j < b && j != i) {
        denom.push_back(logits[j]);  // another query's positive
      } else if (j >= b) {
        denom.push_back(logits[j]);  // shared hard negative
      } else if (j == i) {
        denom.push_back(logits[j]);
      }
    }
    if (debug != nullptr) debug->denominator_terms[i] = denom.size();
    const double lse = logsumexp(denom);
    total_loss += (-logits[i] + lse) * inv_b;

    if (grad != nullptr) {
      for (std::size_t j = 0; j < n_ads; ++j) {
        double d = 0.0;
        if (j == i) d -= inv_b;
        const bool in_denom = (j >= b) || (j != i) || cfg.include_positive;
        if (in_denom) {
          d += inv_b * std::exp(logits[j] - lse);
        }
        if (d == 0.0) continue;
        const double w = d / cfg.temperature;
        for (std::size_t x = 0; x < queries[i].hat.size(); ++x) {
          queries[i].d_hat[x] += w * ads[j].hat[x];
          ads[j].d_hat[x] += w * queries[i].hat[x];
        }
      }
    }
  }

  // Phase 4: shard-restricted backward passes, summed afterwards. Each
  // embedding is local to exactly one shard, so the sum of the per-shard
  // gradients equals the monolithic gradient.
  if (grad != nullptr) {
    for (std::uint32_t s = 0; s < shard_count; ++s) {
      EncoderGrad local(enc.cfg);
      auto flow = [&](Encoded& e) {
        if (e.owner != s) return;
        std::vector<double> d_raw = e.d_hat;
        if (cfg.normalize_similarity) {
          d_raw = normalize_backward(e.raw, e.hat, d_raw);
        }
        backprop_head(enc, e.act, Head::ctr, d_raw, local);
      };
      for (Encoded& e : queries) flow(e);
      for (Encoded& e : ads) flow(e);
      grad->accumulate(local);
    }
  }
  return total_loss;
}

std::vector<std::size_t> score_filter_eligible(
    const std::vector<double>& scores) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < 0.5) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> rank_filter_eligible(
    const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<std::size_t> out;
  for (std::size_t r = 100; r < order.size(); ++r) {
    out.push_back(order[r]);
  }
  return out;
}

std::vector<std::string> mine_hard_negatives(const MiningPool& pool,
                                             const Teacher& teacher,
                                             const std::string& query,
                                             const std::string& positive,
                                             NegativeFilter mode, std::size_t n,
                                             Rng& rng, bool* fell_back) {
  if (pool.ad_texts == nullptr || pool.ad_texts->size() < 200) {
    throw std::invalid_argument(
        "mine_hard_negatives: index must hold at least 200 ads");
  }
  if (n > 4) {
    throw std::invalid_argument(
        "mine_hard_negatives: at most 4 hard negatives per query");
  }
  if (fell_back != nullptr) *fell_back = false;

  const std::vector<ItemId> neighborhood = pool.topk(query, 200);
  std::vector<std::size_t> survivors;  // indices into neighborhood
  std::vector<double> scores;
  survivors.reserve(neighborhood.size());
  for (std::size_t i = 0; i < neighborhood.size(); ++i) {
    const std::string& text = (*pool.ad_texts)[neighborhood[i]];
    if (text == positive) continue;  // never the clicked ad itself
    survivors.push_back(i);
    scores.push_back(teacher.score(query, text));
  }

  std::vector<std::size_t> eligible;  // indices into survivors
  NegativeFilter effective = mode;
  if (mode == NegativeFilter::score) {
    eligible = score_filter_eligible(scores);
    if (eligible.empty()) {
      effective = NegativeFilter::rank;
      if (fell_back != nullptr) *fell_back = true;
      std::cerr << "[mine_hard_negatives] score filter found no ads below "
                   "0.5; falling back to rank filter\n";
    }
  }
  if (effective == NegativeFilter::rank) {
    eligible = rank_filter_eligible(scores);
  } else if (effective == NegativeFilter::none) {
    eligible.resize(survivors.size());
    for (std::size_t i = 0; i < eligible.size(); ++i) eligible[i] = i;
  }

  const std::size_t take = std::min(n, eligible.size());
  std::vector<std::string> out;
  out.reserve(take);
  for (std::uint64_t pick : rng.sample_without_replacement(eligible.size(),
                                                           take)) {
    out.push_back((*pool.ad_texts)[neighborhood[survivors[eligible[pick]]]]);
  }
  return out;
}

void apply_gradient(Encoder& enc, const EncoderGrad& grad,
                    double learning_rate) {
  const std::size_t h = enc.cfg.hidden_dim;
  for (const auto& [col, vals] : grad.w1_cols) {
    double* w = enc.w1.data() + static_cast<std::size_t>(col) * h;
    for (std::size_t r = 0; r < h; ++r) {
      w[r] -= learning_rate * vals[r];
    }
  }
  auto apply = [&](std::vector<double>& w, const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * g[i];
  };
  apply(enc.b1, grad.b1);
  apply(enc.w2, grad.w2);
  apply(enc.b2, grad.b2);
  apply(enc.w_rel, grad.w_rel);
  apply(enc.w_ctr, grad.w_ctr);
  apply(enc.w_rank, grad.w_rank);
}

namespace {

// Dense SGD-with-momentum state, only allocated when momentum is enabled.
struct Velocity {
  std::vector<double> w1, b1, w2, b2, w_rel, w_ctr, w_rank;

  explicit Velocity(const Encoder& enc)
      : w1(enc.w1.size(), 0.0),
        b1(enc.b1.size(), 0.0),
        w2(enc.w2.size(), 0.0),
        b2(enc.b2.size(), 0.0),
        w_rel(enc.w_rel.size(), 0.0),
        w_ctr(enc.w_ctr.size(), 0.0),
        w_rank(enc.w_rank.size(), 0.0) {}

  void step(Encoder& enc, const EncoderGrad& grad, double lr, double mu) {
    const std::size_t h = enc.cfg.hidden_dim;
    for (double& v : w1) v *= mu;
    for (const auto& [col, vals] : grad.w1_cols) {
      double* v = w1.data() + static_cast<std::size_t>(col) * h;
      for (std::size_t r = 0; r < h; ++r) v[r] += vals[r];
    }
    for (std::size_t i = 0; i < w1.size(); ++i) enc.w1[i] -= lr * w1[i];

    auto blend = [&](std::vector<double>& v, const std::vector<double>& g,
                     std::vector<double>& w) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    };
    blend(b1, grad.b1, enc.b1);
    blend(w2, grad.w2, enc.w2);
    blend(b2, grad.b2, enc.b2);
    blend(w_rel, grad.w_rel, enc.w_rel);
    blend(w_ctr, grad.w_ctr, enc.w_ctr);
    blend(w_rank, grad.w_rank, enc.w_rank);
  }
};

std::vector<Embedding> embed_corpus_serving(
    const Encoder& enc, const std::vector<std::string>& corpus) {
  std::vector<Embedding> out;
  out.reserve(corpus.size());
  for (const std::string& text : corpus) {
    out.push_back(enc.serving_embedding(text));
  }
  return out;
}

}  // namespace

Encoder train(const std::vector<ClickRecord>& clicks,
              const std::vector<std::string>& ad_corpus, const Teacher& teacher,
              const EncoderConfig& enc_cfg, const TrainConfig& cfg,
              std::vector<double>* loss_trace) {
  if (clicks.empty()) {
    throw std::invalid_argument("train: empty click dataset");
  }
  if (cfg.shard_count == 0 || cfg.batch_size == 0 ||
      cfg.batch_size % cfg.shard_count != 0) {
    throw std::invalid_argument(
        "train: batch_size must be a positive multiple of shard_count");
  }
  if (cfg.hard_negatives > 4) {
    throw std::invalid_argument("train: at most 4 hard negatives per query");
  }

  Rng init_rng = Rng(cfg.seed).fork(1);
  Rng order_rng = Rng(cfg.seed).fork(2);
  Rng neg_rng = Rng(cfg.seed).fork(3);
  Rng mine_rng = Rng(cfg.seed).fork(4);

  Encoder enc = Encoder::init(enc_cfg, init_rng);
  std::unique_ptr<Velocity> velocity;
  if (cfg.momentum != 0.0) {
    velocity = std::make_unique<Velocity>(enc);
  }

  // Hard negatives per click record, refreshed from a brute-force index.
  std::vector<std::vector<std::string>> mined(clicks.size());
  auto refresh_negatives = [&]() {
    const std::vector<Embedding> corpus_emb =
        embed_corpus_serving(enc, ad_corpus);
    MiningPool pool;
    pool.ad_texts = &ad_corpus;
    std::unordered_map<std::string, std::vector<ItemId>> topk_cache;
    pool.topk = [&](const std::string& query, std::size_t k) {
      auto it = topk_cache.find(query);
      if (it != topk_cache.end()) return it->second;
      const Embedding q = enc.serving_embedding(query);
      std::vector<ItemId> ids;
      for (const SearchHit& hit :
           brute_force(corpus_emb, q, std::min(k, corpus_emb.size()))) {
        ids.push_back(hit.id);
      }
      topk_cache.emplace(query, ids);
      return ids;
    };
    for (std::size_t i = 0; i < clicks.size(); ++i) {
      mined[i] = mine_hard_negatives(pool, teacher, clicks[i].query,
                                     clicks[i].positive, cfg.filter,
                                     cfg.hard_negatives, mine_rng);
    }
  };

  const std::uint32_t per_shard = cfg.batch_size / cfg.shard_count;
  std::vector<std::vector<std::size_t>> shard_pools(cfg.shard_count);
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    shard_pools[clicks[i].shard % cfg.shard_count].push_back(i);
  }
  std::size_t steps_per_epoch = std::numeric_limits<std::size_t>::max();
  for (const auto& pool : shard_pools) {
    steps_per_epoch = std::min(steps_per_epoch, pool.size() / per_shard);
  }
  if (steps_per_epoch == 0) {
    throw std::invalid_argument(
        "train: a shard has fewer clicks than its per-step quota");
  }

  std::size_t step = 0;
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.hard_negatives > 0 &&
        epoch % std::max<std::uint32_t>(cfg.refresh_every, 1) == 0) {
      refresh_negatives();
    }
    for (auto& pool : shard_pools) {
      // Shuffle via indices so the draw order is shard-count independent.
      std::vector<std::uint64_t> perm(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) perm[i] = pool[i];
      order_rng.shuffle(perm);
      pool.assign(perm.begin(), perm.end());
    }

    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      TrainBatch batch;
      batch.triplets.reserve(cfg.batch_size);
      for (std::uint32_t shard = 0; shard < cfg.shard_count; ++shard) {
        for (std::uint32_t i = 0; i < per_shard; ++i) {
          const std::size_t click_idx = shard_pools[shard][s * per_shard + i];
          const ClickRecord& rec = clicks[click_idx];
          Triplet t;
          t.query = rec.query;
          t.positive = rec.positive;
          t.hard_negatives = mined[click_idx];
          t.shard = shard;
          batch.triplets.push_back(std::move(t));
        }
      }

      EncoderGrad grad(enc.cfg);
      double loss = 0.0;
      if (cfg.in_batch_negatives) {
        loss += sharded_contrastive_step(enc, batch, cfg.shard_count, cfg.loss,
                                         &grad);
      } else {
        const double w = 1.0 / static_cast<double>(batch.triplets.size());
        for (const Triplet& t : batch.triplets) {
          std::vector<std::string> negs = t.hard_negatives;
          for (std::uint32_t r = 0; r < cfg.random_negatives; ++r) {
            for (;;) {
              const std::string& cand =
                  ad_corpus[neg_rng.bounded(ad_corpus.size())];
              if (cand != t.positive) {
                negs.push_back(cand);
                break;
              }
            }
          }
          loss += infonce_loss(enc, t.query, t.positive, negs, cfg.loss, &grad,
                               w);
        }
      }
      if (cfg.loss.lambda_rel > 0.0) {
        const double w =
            cfg.loss.lambda_rel / static_cast<double>(batch.triplets.size());
        for (const Triplet& t : batch.triplets) {
          loss += distill_loss(enc, teacher.score(t.query, t.positive),
                               t.query, t.positive, cfg.loss, &grad, w);
        }
      }
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: loss diverged at step " +
                                 std::to_string(step));
      }
      if (loss_trace != nullptr) loss_trace->push_back(loss);
      if (velocity != nullptr) {
        velocity->step(enc, grad, cfg.learning_rate, cfg.momentum);
      } else {
        apply_gradient(enc, grad, cfg.learning_rate);
      }
      if (cfg.log_progress && step % 100 == 0) {
        std::cerr << "[train] step " << step << " loss " << loss << "\n";
      }
    }
  }
  return enc;
}

void save_encoder(const Encoder& enc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_encoder: cannot open " + path.string());
  }
  io::write_magic(out, "UREN");
  io::write_u32(out, 1);
  io::write_u32(out, enc.cfg.feature_dim);
  io::write_u32(out, enc.cfg.hidden_dim);
  io::write_u32(out, enc.cfg.backbone_dim);
  io::write_u32(out, enc.cfg.embed_dim);
  io::write_u32(out, enc.cfg.share_heads ? 1u : 0u);
  const std::size_t h = enc.cfg.hidden_dim;
  const std::size_t f = enc.cfg.feature_dim;
  // w1 is column-major in memory, row-major on disk.
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      io::write_f32(out, static_cast<float>(enc.w1[c * h + r]));
    }
  }
  for (const std::vector<double>* v :
       {&enc.b1, &enc.w2, &enc.b2, &enc.w_rel, &enc.w_ctr, &enc.w_rank}) {
    for (double x : *v) {
      io::write_f32(out, static_cast<float>(x));
    }
  }
  if (!out) {
    throw std::runtime_error("save_encoder: write failed for " +
                             path.string());
  }
}

Encoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_encoder: cannot open " + path.string());
  }
  const std::string what = "encoder " + path.string();
  io::expect_magic(in, "UREN", what);
  io::expect_version(in, 1, what);
  EncoderConfig cfg;
  cfg.feature_dim = io::read_u32(in, what);
  cfg.hidden_dim = io::read_u32(in, what);
  cfg.backbone_dim = io::read_u32(in, what);
  cfg.embed_dim = io::read_u32(in, what);
  cfg.share_heads = (io::read_u32(in, what) & 1u) != 0;

  Encoder enc;
  enc.cfg = cfg;
  enc.featurizer = Featurizer(cfg.feature_dim);
  const std::size_t h = cfg.hidden_dim;
  const std::size_t f = cfg.feature_dim;
  enc.w1.resize(f * h);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      enc.w1[c * h + r] = static_cast<double>(io::read_f32(in, what));
    }
  }
  enc.b1.resize(h);
  enc.w2.resize(static_cast<std::size_t>(cfg.backbone_dim) * h);
  enc.b2.resize(cfg.backbone_dim);
  const std::size_t head_size =
      static_cast<std::size_t>(cfg.embed_dim) * cfg.backbone_dim;
  enc.w_rel.resize(head_size);
  enc.w_ctr.resize(head_size);
  enc.w_rank.resize(head_size);
  for (std::vector<double>* v : {&enc.b1, &enc.w2, &enc.b2, &enc.w_rel,
                                 &enc.w_ctr, &enc.w_rank}) {
    for (double& x : *v) {
      x = static_cast<double>(io::read_f32(in, what));
    }
  }
  return enc;
}

}  // namespace ebr
