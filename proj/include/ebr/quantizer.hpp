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
#include <span>
#include <vector>

#include "ebr/core.hpp"

namespace ebr {

// Product-quantization codebooks: sub_count sub-codebooks of words_per_sub
// codewords each, over dim/sub_count-dimensional segments. Codewords are held
// in 64-bit floats for training, but always sit on the f32 grid so the .cb
// file round-trips bit-exactly.
struct Codebook {
  std::uint32_t sub_count = 0;      // M
  std::uint32_t words_per_sub = 0;  // P, <= 256 so codes fit in bytes
  std::uint32_t dim = 0;            // d

  // words[(m * words_per_sub + j) * sub_dim() + k]
  std::vector<double> words;

  std::uint32_t sub_dim() const { return dim / sub_count; }

  std::span<const double> word(std::uint32_t m, std::uint32_t j) const {
    return {words.data() + (static_cast<std::size_t>(m) * words_per_sub + j) *
                               sub_dim(),
            sub_dim()};
  }
  std::span<double> word(std::uint32_t m, std::uint32_t j) {
    return {words.data() + (static_cast<std::size_t>(m) * words_per_sub + j) *
                               sub_dim(),
            sub_dim()};
  }

  std::size_t byte_size() const { return words.size() * sizeof(float); }
};

// One code byte per sub-codebook.
using PqCode = std::vector<std::uint8_t>;

// Per-query lookup table: entries[m][j] = <q_m, word(m, j)>.
struct AdcTable {
  std::uint32_t sub_count = 0;
  std::uint32_t words_per_sub = 0;
  std::vector<double> entries;

  double at(std::uint32_t m, std::uint32_t j) const {
    return entries[static_cast<std::size_t>(m) * words_per_sub + j];
  }
};

/// Per-subspace k-means. Codewords are initialized from distinct corpus
/// segments drawn through rng; empty clusters are re-seeded from the segment
/// with the largest quantization error. If mse_trace is given it receives the
/// mean squared reconstruction error before each update plus a final value,
/// which is non-increasing.
Codebook train_pq(const std::vector<Embedding>& corpus, std::uint32_t sub_count,
                  std::uint32_t words_per_sub, std::uint32_t iters, Rng& rng,
                  std::vector<double>* mse_trace = nullptr);

/// Nearest codeword per segment (L2); ties break to the lowest index.
PqCode encode(const Codebook& cb, const Embedding& e);

/// Concatenation of the selected codewords.
Embedding reconstruct(const Codebook& cb, const PqCode& code);

AdcTable build_adc(const Codebook& cb, const Embedding& q);

/// Sum of table entries selected by the code; equals
/// inner_product(q, reconstruct(cb, code)) up to rounding.
double approx_ip(const AdcTable& table, const PqCode& code);

double mean_reconstruction_error(const Codebook& cb,
                                 const std::vector<Embedding>& corpus);

// Codebook file: magic "URCB", version u32, M u32, P u32, d u32, then
// M*P*(d/M) little-endian f32.
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

// Code store: magic "URPQ", version u32, N u64, M u32, then N*M code bytes
// in rank order.
void save_codes(std::span<const std::uint8_t> codes, std::uint64_t count,
                std::uint32_t sub_count, const std::filesystem::path& path);
std::vector<std::uint8_t> load_codes(const std::filesystem::path& path,
                                     std::uint64_t* count,
                                     std::uint32_t* sub_count);

std::vector<std::uint8_t> encode_corpus(const Codebook& cb,
                                        const std::vector<Embedding>& corpus);

}  // namespace ebr
