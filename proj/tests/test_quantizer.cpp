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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ebr/quantizer.hpp"

using namespace ebr;

namespace {

Codebook make_codebook(std::uint32_t m, std::uint32_t p, std::uint32_t dim,
                       const std::vector<double>& words) {
  Codebook cb;
  cb.sub_count = m;
  cb.words_per_sub = p;
  cb.dim = dim;
  cb.words = words;
  return cb;
}

std::vector<Embedding> random_corpus(std::size_t n, std::uint32_t dim,
                                     Rng& rng) {
  std::vector<Embedding> out(n, Embedding(dim));
  for (auto& e : out) {
    for (double& v : e) v = rng.normal();
  }
  return out;
}

}  // namespace

TEST_CASE("encode picks the nearest codeword, ties to the lowest index") {
  // Sub-codebook 0: {[0,0],[1,1]}; sub 1: {[0,0],[2,0],[1,0]} padded in dim.
  const Codebook cb = make_codebook(2, 2, 4, {0, 0, 1, 1, 0, 0, 1, 1});
  CHECK(encode(cb, {1, 1, 0, 0}) == PqCode{1, 0});
  CHECK(encode(cb, {0.9, 0.9, 0.1, 0.1}) == PqCode{1, 0});
  // segment equidistant between codewords 0 and 1 -> index 0
  CHECK(encode(cb, {0.5, 0.5, 0.5, 0.5}) == PqCode{0, 0});
  CHECK_THROWS(encode(cb, {1, 2, 3}));
}

TEST_CASE("encode matches a brute-force scan on random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::uint32_t m = 4, p = 16, dim = 16;
    Codebook cb;
    cb.sub_count = m;
    cb.words_per_sub = p;
    cb.dim = dim;
    cb.words.resize(static_cast<std::size_t>(m) * p * cb.sub_dim());
    for (double& w : cb.words) w = rng.normal();
    Embedding e(dim);
    for (double& v : e) v = rng.normal();

    const PqCode code = encode(cb, e);
    for (std::uint32_t mm = 0; mm < m; ++mm) {
      double best = 1e300;
      std::uint32_t best_j = 0;
      for (std::uint32_t j = 0; j < p; ++j) {
        double acc = 0.0;
        for (std::uint32_t k = 0; k < cb.sub_dim(); ++k) {
          const double d = e[mm * cb.sub_dim() + k] - cb.word(mm, j)[k];
          acc += d * d;
        }
        if (acc < best) {
          best = acc;
          best_j = j;
        }
      }
      CHECK(code[mm] == best_j);
    }
  }
}

TEST_CASE("reconstruct concatenates selected codewords") {
  const Codebook cb = make_codebook(2, 2, 4, {1, 0, 0, 0, 0, 0, 0, 1});
  // code {0,1}: word(0,0)=[1,0], word(1,1)=[0,1]
  const Embedding r = reconstruct(cb, {0, 1});
  CHECK(r == Embedding{1, 0, 0, 1});

  // fixed point: encoding a codeword-exact vector reproduces it
  const PqCode code = encode(cb, r);
  CHECK(reconstruct(cb, code) == r);

  Codebook one = make_codebook(1, 2, 2, {1, 2, 3, 4});
  CHECK_THROWS_AS(reconstruct(one, {7}), std::invalid_argument);
}

TEST_CASE("build_adc frozen example") {
  // q=[1,2,3,4], M=2, sub-codebooks {[1,0],[0,1]} and {[1,1],[0,0]}.
  const Codebook cb = make_codebook(2, 2, 4, {1, 0, 0, 1, 1, 1, 0, 0});
  const AdcTable t = build_adc(cb, {1, 2, 3, 4});
  CHECK(t.at(0, 0) == doctest::Approx(1).epsilon(1e-12));
  CHECK(t.at(0, 1) == doctest::Approx(2).epsilon(1e-12));
  CHECK(t.at(1, 0) == doctest::Approx(7).epsilon(1e-12));
  CHECK(t.at(1, 1) == doctest::Approx(0).epsilon(1e-12));

  CHECK(approx_ip(t, {0, 0}) == doctest::Approx(8).epsilon(1e-12));
  CHECK(approx_ip(t, {0, 0}) ==
        doctest::Approx(inner_product({1, 2, 3, 4}, reconstruct(cb, {0, 0})))
            .epsilon(1e-12));

  const AdcTable zero = build_adc(cb, {0, 0, 0, 0});
  CHECK(approx_ip(zero, {1, 1}) == 0.0);
}

TEST_CASE("adc equals the reconstruction inner product on random pairs") {
  Rng rng(13);
  const std::uint32_t m = 8, p = 32, dim = 32;
  Codebook cb;
  cb.sub_count = m;
  cb.words_per_sub = p;
  cb.dim = dim;
  cb.words.resize(static_cast<std::size_t>(m) * p * cb.sub_dim());
  for (double& w : cb.words) w = rng.normal();

  for (int trial = 0; trial < 500; ++trial) {
    Embedding q(dim);
    for (double& v : q) v = rng.normal();
    PqCode code(m);
    for (auto& c : code) c = static_cast<std::uint8_t>(rng.bounded(p));
    const AdcTable t = build_adc(cb, q);
    const double direct = inner_product(q, reconstruct(cb, code));
    CHECK(std::abs(approx_ip(t, code) - direct) <=
          1e-6 * (1.0 + std::abs(direct)));
  }

  // degenerate M=1: the table lookup is the whole inner product
  Codebook single = make_codebook(1, 2, 2, {1, 2, 3, 4});
  const AdcTable t = build_adc(single, {0.5, 0.25});
  CHECK(approx_ip(t, {1}) ==
        doctest::Approx(inner_product({0.5, 0.25}, {3, 4})).epsilon(1e-12));
}

TEST_CASE("train_pq reproduces exactly clustered segments") {
  // Segments take exactly P distinct values per subspace.
  Rng rng(21);
  const std::uint32_t p = 4;
  std::vector<Embedding> corpus;
  const double centers[4] = {-3, -1, 1, 3};
  for (int rep = 0; rep < 16; ++rep) {
    for (std::uint32_t j = 0; j < p; ++j) {
      corpus.push_back({centers[j], centers[j] * 0.5,
                        centers[(j + rep) % p], centers[(j + rep) % p] * 2});
    }
  }
  const Codebook cb = train_pq(corpus, 2, p, 10, rng);
  CHECK(mean_reconstruction_error(cb, corpus) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("train_pq with P=1 yields segment means") {
  Rng rng(4);
  std::vector<Embedding> corpus = {{1, 2, 3, 4}, {3, 6, 5, 0}, {2, 1, 1, 2}};
  const Codebook cb = train_pq(corpus, 2, 1, 5, rng);
  CHECK(cb.word(0, 0)[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(cb.word(0, 0)[1] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(cb.word(1, 0)[0] == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(cb.word(1, 0)[1] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("train_pq beats random codebooks and decreases monotonically") {
  Rng rng(42);
  const auto corpus = random_corpus(256, 8, rng);

  std::vector<double> trace;
  Rng train_rng(1);
  const Codebook cb = train_pq(corpus, 2, 4, 12, train_rng, &trace);
  for (std::size_t i = 1; i < trace.size(); ++i) {
    CHECK(trace[i] <= trace[i - 1] + 1e-12);
  }

  const double trained_err = mean_reconstruction_error(cb, corpus);
  // Oracle: 100 random codebooks drawn from corpus segments.
  Rng draw_rng(9);
  for (int draw = 0; draw < 100; ++draw) {
    Codebook random_cb = cb;
    for (std::uint32_t m = 0; m < 2; ++m) {
      for (std::uint32_t j = 0; j < 4; ++j) {
        const auto& src = corpus[draw_rng.bounded(corpus.size())];
        for (std::uint32_t k = 0; k < random_cb.sub_dim(); ++k) {
          random_cb.word(m, j)[k] = src[m * random_cb.sub_dim() + k];
        }
      }
    }
    CHECK(trained_err <= mean_reconstruction_error(random_cb, corpus) + 1e-12);
  }
}

TEST_CASE("train_pq validates its inputs") {
  Rng rng(1);
  auto corpus = random_corpus(8, 6, rng);
  CHECK_THROWS_AS(train_pq(corpus, 4, 2, 5, rng), std::invalid_argument);
  CHECK_THROWS_AS(train_pq(corpus, 2, 16, 5, rng), std::invalid_argument);
}

TEST_CASE("codebook and code files round-trip bit-exactly") {
  Rng rng(77);
  const auto corpus = random_corpus(300, 16, rng);
  const Codebook cb = train_pq(corpus, 4, 8, 8, rng);

  const auto dir = std::filesystem::temp_directory_path() / "ebr_quant_test";
  std::filesystem::create_directories(dir);
  const auto cb_path = dir / "test.cb";
  save_codebook(cb, cb_path);
  const Codebook back = load_codebook(cb_path);
  CHECK(back.sub_count == cb.sub_count);
  CHECK(back.words_per_sub == cb.words_per_sub);
  CHECK(back.dim == cb.dim);
  REQUIRE(back.words.size() == cb.words.size());
  for (std::size_t i = 0; i < cb.words.size(); ++i) {
    CHECK(back.words[i] == cb.words[i]);  // bit-identical via the f32 grid
  }

  const auto codes = encode_corpus(cb, corpus);
  const auto code_path = dir / "test.pqc";
  save_codes(codes, corpus.size(), cb.sub_count, code_path);
  std::uint64_t n = 0;
  std::uint32_t m = 0;
  const auto codes_back = load_codes(code_path, &n, &m);
  CHECK(n == corpus.size());
  CHECK(m == cb.sub_count);
  CHECK(codes_back == codes);

  // Truncated code file reports expected vs actual.
  const auto truncated = dir / "trunc.pqc";
  {
    std::ifstream in(code_path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 10));
  }
  CHECK_THROWS_WITH_AS(load_codes(truncated, &n, &m),
                       doctest::Contains("expected"), std::runtime_error);

  // Corrupt magic fails with a format error.
  const auto bad = dir / "bad.cb";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "XXCB then garbage";
  }
  CHECK_THROWS_WITH_AS(load_codebook(bad), doctest::Contains("magic"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}
