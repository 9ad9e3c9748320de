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

#include "ebr/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "ebr/serialize.hpp"

namespace ebr {

namespace {

double segment_sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void validate_geometry(std::uint32_t dim, std::uint32_t sub_count,
                       std::uint32_t words_per_sub) {
  if (sub_count == 0 || dim == 0 || dim % sub_count != 0) {
    throw std::invalid_argument(
        "quantizer: dim " + std::to_string(dim) +
        " not divisible by sub-codebook count " + std::to_string(sub_count));
  }
  if (words_per_sub == 0 || words_per_sub > 256) {
    throw std::invalid_argument(
        "quantizer: words per sub-codebook must be in [1, 256], got " +
        std::to_string(words_per_sub));
  }
}

void snap_to_f32(std::vector<double>& values) {
  for (double& v : values) {
    v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace

Codebook train_pq(const std::vector<Embedding>& corpus, std::uint32_t sub_count,
                  std::uint32_t words_per_sub, std::uint32_t iters, Rng& rng,
                  std::vector<double>* mse_trace) {
  if (corpus.empty()) {
    throw std::invalid_argument("train_pq: empty corpus");
  }
  const std::uint32_t dim = static_cast<std::uint32_t>(corpus.front().size());
  validate_geometry(dim, sub_count, words_per_sub);
  if (corpus.size() < words_per_sub) {
    throw std::invalid_argument("train_pq: corpus size " +
                                std::to_string(corpus.size()) +
                                " is below codeword count " +
                                std::to_string(words_per_sub));
  }
  const std::uint32_t sub_dim = dim / sub_count;
  const std::size_t n = corpus.size();

  Codebook cb;
  cb.sub_count = sub_count;
  cb.words_per_sub = words_per_sub;
  cb.dim = dim;
  cb.words.assign(static_cast<std::size_t>(sub_count) * words_per_sub * sub_dim,
                  0.0);

  if (mse_trace != nullptr) {
    mse_trace->assign(iters + 1, 0.0);
  }

  std::vector<double> segments(n * sub_dim);
  std::vector<std::uint32_t> assignment(n);
  std::vector<double> point_err(n);
  std::vector<double> sums(static_cast<std::size_t>(words_per_sub) * sub_dim);
  std::vector<std::size_t> counts(words_per_sub);

  for (std::uint32_t m = 0; m < sub_count; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const Embedding& e = corpus[i];
      if (e.size() != dim) {
        throw std::invalid_argument("train_pq: inconsistent dimensions");
      }
      std::copy_n(e.data() + static_cast<std::size_t>(m) * sub_dim, sub_dim,
                  segments.data() + i * sub_dim);
    }
    auto seg = [&](std::size_t i) {
      return std::span<const double>(segments.data() + i * sub_dim, sub_dim);
    };

    // Seed codewords from distinct segment values in a shuffled order; if
    // the corpus has fewer distinct values, cycle through what was found.
    std::vector<std::uint64_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> chosen;
    chosen.reserve(words_per_sub);
    for (std::size_t idx : order) {
      if (chosen.size() == words_per_sub) break;
      bool duplicate = false;
      for (std::size_t c : chosen) {
        if (std::equal(seg(idx).begin(), seg(idx).end(), seg(c).begin())) {
          duplicate = true;
          break;
        }
      }
      if (!duplicate) chosen.push_back(idx);
    }
    for (std::uint32_t j = 0; j < words_per_sub; ++j) {
      const std::size_t src = chosen[j % chosen.size()];
      std::copy_n(seg(src).begin(), sub_dim, cb.word(m, j).begin());
    }

    auto assign_pass = [&]() {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_j = 0;
        for (std::uint32_t j = 0; j < words_per_sub; ++j) {
          const double d = segment_sq_dist(seg(i), cb.word(m, j));
          if (d < best) {
            best = d;
            best_j = j;
          }
        }
        assignment[i] = best_j;
        point_err[i] = best;
        total += best;
      }
      return total / static_cast<double>(n);
    };

    for (std::uint32_t it = 0; it < iters; ++it) {
      const double mse = assign_pass();
      if (mse_trace != nullptr) (*mse_trace)[it] += mse;

      std::fill(sums.begin(), sums.end(), 0.0);
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        counts[assignment[i]]++;
        double* dst = sums.data() +
                      static_cast<std::size_t>(assignment[i]) * sub_dim;
        for (std::uint32_t k = 0; k < sub_dim; ++k) {
          dst[k] += seg(i)[k];
        }
      }
      for (std::uint32_t j = 0; j < words_per_sub; ++j) {
        if (counts[j] == 0) continue;
        auto w = cb.word(m, j);
        const double* src = sums.data() + static_cast<std::size_t>(j) * sub_dim;
        for (std::uint32_t k = 0; k < sub_dim; ++k) {
          w[k] = src[k] / static_cast<double>(counts[j]);
        }
      }
      // Re-seed empty clusters from the worst-quantized segments.
      for (std::uint32_t j = 0; j < words_per_sub; ++j) {
        if (counts[j] != 0) continue;
        std::size_t worst = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (point_err[i] > point_err[worst]) worst = i;
        }
        std::copy_n(seg(worst).begin(), sub_dim, cb.word(m, j).begin());
        point_err[worst] = 0.0;  // claimed
      }
    }
    if (mse_trace != nullptr) (*mse_trace)[iters] += assign_pass();
  }

  snap_to_f32(cb.words);
  return cb;
}

PqCode encode(const Codebook& cb, const Embedding& e) {
  if (e.size() != cb.dim) {
    throw std::invalid_argument("encode: dimension mismatch (" +
                                std::to_string(e.size()) + " vs codebook " +
                                std::to_string(cb.dim) + ")");
  }
  const std::uint32_t sub_dim = cb.sub_dim();
  PqCode code(cb.sub_count);
  for (std::uint32_t m = 0; m < cb.sub_count; ++m) {
    std::span<const double> seg(e.data() +
                                    static_cast<std::size_t>(m) * sub_dim,
                                sub_dim);
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_j = 0;
    for (std::uint32_t j = 0; j < cb.words_per_sub; ++j) {
      const double d = segment_sq_dist(seg, cb.word(m, j));
      if (d < best) {  // strict: ties keep the lowest index
        best = d;
        best_j = j;
      }
    }
    code[m] = static_cast<std::uint8_t>(best_j);
  }
  return code;
}

Embedding reconstruct(const Codebook& cb, const PqCode& code) {
  if (code.size() != cb.sub_count) {
    throw std::invalid_argument("reconstruct: code length mismatch");
  }
  const std::uint32_t sub_dim = cb.sub_dim();
  Embedding out(cb.dim);
  for (std::uint32_t m = 0; m < cb.sub_count; ++m) {
    if (code[m] >= cb.words_per_sub) {
      throw std::invalid_argument("reconstruct: code entry " +
                                  std::to_string(code[m]) +
                                  " out of range (P=" +
                                  std::to_string(cb.words_per_sub) + ")");
    }
    auto w = cb.word(m, code[m]);
    std::copy_n(w.begin(), sub_dim,
                out.begin() + static_cast<std::size_t>(m) * sub_dim);
  }
  return out;
}

AdcTable build_adc(const Codebook& cb, const Embedding& q) {
  if (q.size() != cb.dim) {
    throw std::invalid_argument("build_adc: dimension mismatch (" +
                                std::to_string(q.size()) + " vs codebook " +
                                std::to_string(cb.dim) + ")");
  }
  const std::uint32_t sub_dim = cb.sub_dim();
  AdcTable table;
  table.sub_count = cb.sub_count;
  table.words_per_sub = cb.words_per_sub;
  table.entries.resize(static_cast<std::size_t>(cb.sub_count) *
                       cb.words_per_sub);
  for (std::uint32_t m = 0; m < cb.sub_count; ++m) {
    const double* qs = q.data() + static_cast<std::size_t>(m) * sub_dim;
    for (std::uint32_t j = 0; j < cb.words_per_sub; ++j) {
      auto w = cb.word(m, j);
      double acc = 0.0;
      for (std::uint32_t k = 0; k < sub_dim; ++k) {
        acc += qs[k] * w[k];
      }
      table.entries[static_cast<std::size_t>(m) * cb.words_per_sub + j] = acc;
    }
  }
  return table;
}

double approx_ip(const AdcTable& table, const PqCode& code) {
  if (code.size() != table.sub_count) {
    throw std::invalid_argument("approx_ip: code length mismatch");
  }
  double acc = 0.0;
  for (std::uint32_t m = 0; m < table.sub_count; ++m) {
    acc += table.at(m, code[m]);
  }
  return acc;
}

double mean_reconstruction_error(const Codebook& cb,
                                 const std::vector<Embedding>& corpus) {
  double total = 0.0;
  for (const Embedding& e : corpus) {
    const Embedding r = reconstruct(cb, encode(cb, e));
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double d = e[i] - r[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(corpus.size());
}

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_codebook: cannot open " + path.string());
  }
  io::write_magic(out, "URCB");
  io::write_u32(out, 1);
  io::write_u32(out, cb.sub_count);
  io::write_u32(out, cb.words_per_sub);
  io::write_u32(out, cb.dim);
  for (double v : cb.words) {
    io::write_f32(out, static_cast<float>(v));
  }
  if (!out) {
    throw std::runtime_error("save_codebook: write failed for " +
                             path.string());
  }
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_codebook: cannot open " + path.string());
  }
  const std::string what = "codebook " + path.string();
  io::expect_magic(in, "URCB", what);
  io::expect_version(in, 1, what);
  Codebook cb;
  cb.sub_count = io::read_u32(in, what);
  cb.words_per_sub = io::read_u32(in, what);
  cb.dim = io::read_u32(in, what);
  validate_geometry(cb.dim, cb.sub_count, cb.words_per_sub);
  const std::size_t total = static_cast<std::size_t>(cb.sub_count) *
                            cb.words_per_sub * cb.sub_dim();
  cb.words.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    cb.words[i] = static_cast<double>(io::read_f32(in, what));
  }
  return cb;
}

void save_codes(std::span<const std::uint8_t> codes, std::uint64_t count,
                std::uint32_t sub_count, const std::filesystem::path& path) {
  if (codes.size() != count * sub_count) {
    throw std::invalid_argument("save_codes: buffer size " +
                                std::to_string(codes.size()) +
                                " does not equal N*M");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_codes: cannot open " + path.string());
  }
  io::write_magic(out, "URPQ");
  io::write_u32(out, 1);
  io::write_u64(out, count);
  io::write_u32(out, sub_count);
  out.write(reinterpret_cast<const char*>(codes.data()),
            static_cast<std::streamsize>(codes.size()));
  if (!out) {
    throw std::runtime_error("save_codes: write failed for " + path.string());
  }
}

std::vector<std::uint8_t> load_codes(const std::filesystem::path& path,
                                     std::uint64_t* count,
                                     std::uint32_t* sub_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_codes: cannot open " + path.string());
  }
  const std::string what = "code store " + path.string();
  io::expect_magic(in, "URPQ", what);
  io::expect_version(in, 1, what);
  const std::uint64_t n = io::read_u64(in, what);
  const std::uint32_t m = io::read_u32(in, what);
  std::vector<std::uint8_t> codes(n * m);
  io::read_exact(in, codes.data(), codes.size(), what);
  if (count != nullptr) *count = n;
  if (sub_count != nullptr) *sub_count = m;
  return codes;
}

std::vector<std::uint8_t> encode_corpus(const Codebook& cb,
                                        const std::vector<Embedding>& corpus) {
  std::vector<std::uint8_t> codes;
  codes.reserve(corpus.size() * cb.sub_count);
  for (const Embedding& e : corpus) {
    const PqCode c = encode(cb, e);
    codes.insert(codes.end(), c.begin(), c.end());
  }
  return codes;
}

}  // namespace ebr
