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
#include <string>
#include <vector>

#include "ebr/quantizer.hpp"
#include "ebr/trainer.hpp"

namespace ebr {

struct TextPair {
  std::string query;
  std::string ad;
};

struct MopqConfig {
  std::uint32_t steps = 1500;
  std::uint32_t batch_size = 32;
  double learning_rate = 0.05;
  double temperature = 0.05;
  bool include_positive = true;
  // By default only the codebooks move; the dense-side copy of the
  // straight-through gradient reaches the pooling heads / backbone only when
  // these are enabled.
  bool train_heads = false;
  bool train_backbone = false;
  std::uint64_t seed = 1;
};

/// Contrastive batch loss where the ad side goes through encode/reconstruct.
/// Queries are dense; each query's denominator holds the in-batch ads.
/// `codes` must be the codes of `ads` under `cb` (callers freeze them for
/// finite-difference checks). Gradients: `grad_words` receives the
/// straight-through codebook gradient (selected codeword per segment);
/// `grad_ads`, when given, receives the dense-side copy d(loss)/d(ad).
double mopq_batch_loss(const Codebook& cb, const std::vector<Embedding>& queries,
                       const std::vector<Embedding>& ads,
                       const std::vector<PqCode>& codes, double temperature,
                       bool include_positive,
                       std::vector<double>* grad_words = nullptr,
                       std::vector<Embedding>* grad_ads = nullptr);

/// Retrieval-trained codebooks: starting from c0 (typically train_pq output),
/// gradient descent on the contrastive objective over (query, clicked ad)
/// pairs with straight-through codeword selection. Serving embeddings feed
/// both sides. Throws, naming the step, if the loss stops being finite.
Codebook train_mopq(const std::vector<TextPair>& pairs, Encoder& enc,
                    const Codebook& c0, const MopqConfig& cfg,
                    std::vector<double>* loss_trace = nullptr);

}  // namespace ebr
