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

#include "ebr/mopq.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ebr {

namespace {

double logsumexp(const std::vector<double>& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  double acc = 0.0;
  for (double v : logits) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace

double mopq_batch_loss(const Codebook& cb, const std::vector<Embedding>& queries,
                       const std::vector<Embedding>& ads,
                       const std::vector<PqCode>& codes, double temperature,
                       bool include_positive, std::vector<double>* grad_words,
                       std::vector<Embedding>* grad_ads) {
  const std::size_t b = queries.size();
  if (b == 0 || ads.size() != b || codes.size() != b) {
    throw std::invalid_argument("mopq_batch_loss: batch shape mismatch");
  }
  if (grad_words != nullptr) {
    grad_words->assign(cb.words.size(), 0.0);
  }
  if (grad_ads != nullptr) {
    grad_ads->assign(b, Embedding(cb.dim, 0.0));
  }

  std::vector<Embedding> recon(b);
  for (std::size_t j = 0; j < b; ++j) {
    recon[j] = reconstruct(cb, codes[j]);
  }

  std::vector<double> logits(b);
  std::vector<std::vector<double>> d_logits(b, std::vector<double>(b, 0.0));
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      logits[j] = inner_product(queries[i], recon[j]) / temperature;
    }
    std::vector<double> denom;
    denom.reserve(b);
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i && !include_positive) continue;
      denom.push_back(logits[j]);
    }
    const double lse = logsumexp(denom);
    total += (-logits[i] + lse) * inv_b;
    for (std::size_t j = 0; j < b; ++j) {
      double d = 0.0;
      if (j == i) d -= inv_b;
      if (j != i || include_positive) {
        d += inv_b * std::exp(logits[j] - lse);
      }
      d_logits[i][j] = d;
    }
  }

  if (grad_words != nullptr || grad_ads != nullptr) {
    const std::uint32_t sub_dim = cb.sub_dim();
    for (std::size_t j = 0; j < b; ++j) {
      // d(loss)/d(recon_j) = sum_i d_logits[i][j] * q_i / temperature;
      // the straight-through estimator copies it onto the selected codeword
      // and onto the dense ad segment.
      Embedding d_recon(cb.dim, 0.0);
      for (std::size_t i = 0; i < b; ++i) {
        const double w = d_logits[i][j] / temperature;
        if (w == 0.0) continue;
        for (std::uint32_t x = 0; x < cb.dim; ++x) {
          d_recon[x] += w * queries[i][x];
        }
      }
      for (std::uint32_t m = 0; m < cb.sub_count; ++m) {
        const std::size_t base =
            (static_cast<std::size_t>(m) * cb.words_per_sub + codes[j][m]) *
            sub_dim;
        for (std::uint32_t x = 0; x < sub_dim; ++x) {
          const double g = d_recon[static_cast<std::size_t>(m) * sub_dim + x];
          if (grad_words != nullptr) (*grad_words)[base + x] += g;
          if (grad_ads != nullptr) {
            (*grad_ads)[j][static_cast<std::size_t>(m) * sub_dim + x] += g;
          }
        }
      }
    }
  }
  return total;
}

Codebook train_mopq(const std::vector<TextPair>& pairs, Encoder& enc,
                    const Codebook& c0, const MopqConfig& cfg,
                    std::vector<double>* loss_trace) {
  if (pairs.empty()) {
    throw std::invalid_argument("train_mopq: empty training set");
  }
  Codebook cb = c0;
  Rng order_rng = Rng(cfg.seed).fork(11);

  std::vector<double> grad_words;
  std::vector<Embedding> grad_ads;
  const bool train_encoder = cfg.train_heads || cfg.train_backbone;

  for (std::uint32_t step = 0; step < cfg.steps; ++step) {
    const std::size_t batch =
        std::min<std::size_t>(cfg.batch_size, pairs.size());
    std::vector<const TextPair*> picked(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      picked[i] = &pairs[order_rng.bounded(pairs.size())];
    }

    std::vector<Encoder::Activations> acts_q(batch), acts_a(batch);
    std::vector<Embedding> queries(batch), ads(batch);
    std::vector<PqCode> codes(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      queries[i] = enc.serving_embedding(picked[i]->query);
      acts_a[i] = enc.backbone_forward(picked[i]->ad);
      const Embedding rel = enc.head_forward(acts_a[i], Head::rel);
      const Embedding ctr = enc.head_forward(acts_a[i], Head::ctr);
      Embedding serving = l2_normalize(rel);
      const Embedding ctr_n = l2_normalize(ctr);
      for (std::size_t x = 0; x < serving.size(); ++x) serving[x] += ctr_n[x];
      ads[i] = serving;
      codes[i] = encode(cb, ads[i]);
    }

    const double loss = mopq_batch_loss(
        cb, queries, ads, codes, cfg.temperature, cfg.include_positive,
        &grad_words, train_encoder ? &grad_ads : nullptr);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train_mopq: loss diverged at step " +
                               std::to_string(step));
    }
    if (loss_trace != nullptr) loss_trace->push_back(loss);

    for (std::size_t w = 0; w < cb.words.size(); ++w) {
      cb.words[w] -= cfg.learning_rate * grad_words[w];
    }

    if (train_encoder) {
      // Dense-side copy of the straight-through gradient, pushed through the
      // serving-embedding sum of normalized heads.
      EncoderGrad grad(enc.cfg);
      for (std::size_t i = 0; i < batch; ++i) {
        const Embedding rel = enc.head_forward(acts_a[i], Head::rel);
        const Embedding ctr = enc.head_forward(acts_a[i], Head::ctr);
        const Embedding rel_n = l2_normalize(rel);
        const Embedding ctr_n = l2_normalize(ctr);
        const double rel_norm = l2_norm(rel);
        const double ctr_norm = l2_norm(ctr);
        auto back_through_norm = [&](const Embedding& raw,
                                     const Embedding& unit, double norm,
                                     Head head) {
          std::vector<double> d_raw(raw.size());
          double proj = 0.0;
          for (std::size_t x = 0; x < raw.size(); ++x) {
            proj += unit[x] * grad_ads[i][x];
          }
          for (std::size_t x = 0; x < raw.size(); ++x) {
            d_raw[x] = (grad_ads[i][x] - unit[x] * proj) / norm;
          }
          backprop_head(enc, acts_a[i], head, d_raw, grad);
        };
        back_through_norm(rel, rel_n, rel_norm, Head::rel);
        back_through_norm(ctr, ctr_n, ctr_norm, Head::ctr);
      }
      if (!cfg.train_backbone) {
        // Heads only: zero out the backbone part of the update.
        std::fill(grad.b1.begin(), grad.b1.end(), 0.0);
        std::fill(grad.w2.begin(), grad.w2.end(), 0.0);
        std::fill(grad.b2.begin(), grad.b2.end(), 0.0);
        grad.w1_cols.clear();
      }
      if (!cfg.train_heads) {
        std::fill(grad.w_rel.begin(), grad.w_rel.end(), 0.0);
        std::fill(grad.w_ctr.begin(), grad.w_ctr.end(), 0.0);
      }
      apply_gradient(enc, grad, cfg.learning_rate);
    }
  }

  // Keep the stored codebook on the f32 grid like train_pq does.
  for (double& v : cb.words) {
    v = static_cast<double>(static_cast<float>(v));
  }
  return cb;
}

}  // namespace ebr
