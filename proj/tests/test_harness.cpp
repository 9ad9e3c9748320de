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

#include <cmath>
#include <fstream>

#include "ebr/harness.hpp"
#include "test_util.hpp"

using namespace ebr;
using namespace ebr::testutil;

TEST_CASE("hit_at_k") {
  const std::vector<ItemId> retrieved = {4, 9, 2, 7};
  CHECK(hit_at_k(retrieved, 4, 10) == 1.0);
  CHECK(hit_at_k(retrieved, 7, 3) == 0.0);
  CHECK(hit_at_k(retrieved, 7, 4) == 1.0);
  CHECK(hit_at_k({}, 1, 10) == 0.0);
}

TEST_CASE("rel_at_k") {
  const std::vector<ItemId> retrieved = {1, 2};
  CHECK(rel_at_k(retrieved, [](ItemId) { return 0.7; }, 2) ==
        doctest::Approx(0.7));
  CHECK(rel_at_k(retrieved, [](ItemId id) { return id == 1 ? 1.0 : 0.5; },
                 2) == doctest::Approx(0.75));
  CHECK(rel_at_k(retrieved, [](ItemId id) { return id == 1 ? 0.9 : 0.1; },
                 1) == doctest::Approx(0.9));
  CHECK_THROWS_AS(rel_at_k({}, [](ItemId) { return 1.0; }, 3),
                  std::invalid_argument);
}

TEST_CASE("ndcg and mrr") {
  // ideal order scores 1 exactly
  const std::vector<ItemId> ideal_order = {0, 1, 2};
  auto gain = [](ItemId id) { return 3.0 - static_cast<double>(id); };
  const std::vector<double> ideal_gains = {3.0, 2.0, 1.0};
  CHECK(ndcg_at_k(ideal_order, gain, ideal_gains, 3) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // single relevant item at rank 2, binary gains: 1/log2(3)
  CHECK(ndcg_binary_at_k({5, 9}, {9}, 10) ==
        doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-9));

  CHECK(mrr({3, 4, 5}, {5}) == doctest::Approx(1.0 / 3.0));
  CHECK(mrr({3, 4, 5}, {99}) == 0.0);
  CHECK_THROWS_AS(ndcg_binary_at_k({1}, {}, 5), std::invalid_argument);
  CHECK_THROWS_AS(mrr({1}, {}), std::invalid_argument);
}

TEST_CASE("recall_at_k") {
  CHECK(recall_at_k({1, 2, 3}, {1, 2, 3}, 3) == doctest::Approx(1.0));
  CHECK(recall_at_k({1, 9, 8}, {1, 2, 3}, 3) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("planted relevance formula instances") {
  // identical single topic, zero noise: sigmoid(6)
  CHECK(SyntheticWorld::planted_relevance(1.0, 6.0, 0.0) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-6.0))).epsilon(1e-12));
  // orthogonal topics, zero noise: 0.5
  CHECK(SyntheticWorld::planted_relevance(0.0, 6.0, 0.0) == 0.5);
}

TEST_CASE("world generation is deterministic and validates N") {
  WorldConfig cfg;
  cfg.ad_count = 250;
  cfg.train_query_count = 60;
  cfg.test_query_count = 20;
  cfg.click_count = 200;
  cfg.topic_count = 6;

  Rng rng_a(5), rng_b(5);
  const SyntheticWorld a = SyntheticWorld::generate(cfg, rng_a);
  const SyntheticWorld b = SyntheticWorld::generate(cfg, rng_b);
  REQUIRE(a.ads.size() == 250);
  REQUIRE(a.queries.size() == 80);
  REQUIRE(a.clicks.size() == 200);
  for (std::size_t i = 0; i < a.ads.size(); ++i) {
    CHECK(a.ads[i].text == b.ads[i].text);
    CHECK(a.ads[i].popularity == b.ads[i].popularity);
    CHECK(a.ads[i].bid == b.ads[i].bid);
  }
  for (std::size_t i = 0; i < a.clicks.size(); ++i) {
    CHECK(a.clicks[i].query == b.clicks[i].query);
    CHECK(a.clicks[i].ad == b.clicks[i].ad);
  }

  WorldConfig too_small = cfg;
  too_small.ad_count = 150;
  Rng rng_c(5);
  CHECK_THROWS_AS(SyntheticWorld::generate(too_small, rng_c),
                  std::invalid_argument);

  // every test query carries a planted click
  for (std::uint64_t qi : a.test_query_indices()) {
    CHECK(a.queries[qi].clicked != kNoNeighbor);
  }
  // click probabilities stay inside [0, 1]
  for (int i = 0; i < 50; ++i) {
    const double p = a.click_prob(i % a.queries.size(), i % a.ads.size());
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("world round-trips through its binary file") {
  TempDir dir("ebr_world_bin");
  WorldConfig cfg;
  cfg.ad_count = 220;
  cfg.train_query_count = 30;
  cfg.test_query_count = 10;
  cfg.click_count = 80;
  cfg.topic_count = 5;
  Rng rng(9);
  const SyntheticWorld w = SyntheticWorld::generate(cfg, rng);
  save_world(w, dir.path / "world.bin");
  const SyntheticWorld back = load_world(dir.path / "world.bin");
  CHECK(back.noise_salt == w.noise_salt);
  REQUIRE(back.ads.size() == w.ads.size());
  for (std::size_t i = 0; i < w.ads.size(); ++i) {
    CHECK(back.ads[i].text == w.ads[i].text);
    CHECK(back.ads[i].bid == w.ads[i].bid);
  }
  // identical planted functions after reload
  CHECK(back.relevance(3, 7) == w.relevance(3, 7));
  CHECK(back.psi_score(12, 140) == w.psi_score(12, 140));
}

TEST_CASE("world TSVs are emitted and parse back") {
  TempDir dir("ebr_world_tsv");
  WorldConfig cfg;
  cfg.ad_count = 210;
  cfg.train_query_count = 25;
  cfg.test_query_count = 8;
  cfg.click_count = 60;
  cfg.topic_count = 4;
  Rng rng(13);
  const SyntheticWorld w = SyntheticWorld::generate(cfg, rng);
  write_world_tsvs(w, dir.path);
  for (const char* name : {"corpus.tsv", "queries.tsv", "clicks.tsv",
                           "teacher_scores.tsv", "rank_source.tsv"}) {
    CHECK(std::filesystem::file_size(dir.path / name) > 0);
  }
  // clicks.tsv rows: query \t ad \t shard, resolvable through the teacher
  std::ifstream clicks(dir.path / "clicks.tsv");
  std::string line;
  const PlantedTeacher teacher(w);
  int rows = 0;
  while (std::getline(clicks, line)) {
    const auto t1 = line.find('\t');
    const auto t2 = line.rfind('\t');
    REQUIRE(t1 != std::string::npos);
    REQUIRE(t2 > t1);
    const std::string q = line.substr(0, t1);
    const std::string a = line.substr(t1 + 1, t2 - t1 - 1);
    const double rel = teacher.score(q, a);
    CHECK(rel >= 0.0);
    CHECK(rel <= 1.0);
    rows++;
  }
  CHECK(rows == 60);
}

TEST_CASE("planted teacher rejects unknown texts") {
  WorldConfig cfg;
  cfg.ad_count = 205;
  cfg.train_query_count = 10;
  cfg.test_query_count = 5;
  cfg.click_count = 30;
  cfg.topic_count = 4;
  Rng rng(3);
  const SyntheticWorld w = SyntheticWorld::generate(cfg, rng);
  const PlantedTeacher teacher(w);
  CHECK_THROWS_AS(teacher.score("no such query", w.ads[0].text),
                  std::runtime_error);
  const double s = teacher.score(w.queries[0].text, w.ads[0].text);
  CHECK(s == doctest::Approx(w.relevance(0, 0)));
}

TEST_CASE("ladder with zero training steps gives identical rows") {
  WorldConfig cfg;
  cfg.ad_count = 240;
  cfg.train_query_count = 40;
  cfg.test_query_count = 12;
  cfg.click_count = 128;
  cfg.topic_count = 6;
  Rng rng(21);
  const SyntheticWorld w = SyntheticWorld::generate(cfg, rng);

  LadderConfig lcfg;
  lcfg.encoder = tiny_encoder_config();
  lcfg.epochs = 0;  // untrained encoders everywhere
  lcfg.base_batch = 8;
  lcfg.eval_ks = {10};
  lcfg.seed = 2;

  const auto rows = run_ladder(w, lcfg);
  REQUIRE(rows.size() == 8);
  // Identical untrained encoder => identical metrics on every rung. The two
  // shared-head rungs differ from the disentangled ones only through the
  // head resolution, which changes nothing when rel == ctr is not forced;
  // with zero steps the init is the same, so all Hit@10 agree pairwise where
  // the encoder config agrees.
  CHECK(rows[0].metrics.hit_at.at(10) == rows[1].metrics.hit_at.at(10));
  for (std::size_t i = 3; i < rows.size(); ++i) {
    CHECK(rows[i].metrics.hit_at.at(10) == rows[2].metrics.hit_at.at(10));
    CHECK(rows[i].metrics.rel_at.at(10) == rows[2].metrics.rel_at.at(10));
  }

  TempDir dir("ebr_ladder_tsv");
  write_ladder_tsv(rows, lcfg.eval_ks, dir.path / "ladder.tsv");
  std::ifstream in(dir.path / "ladder.tsv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "method\thit@10\trel@10");
}

TEST_CASE("bench rows carry recalls, sector reads and modeled latency") {
  TempDir dir("ebr_bench");
  WorldConfig cfg;
  cfg.ad_count = 300;
  cfg.train_query_count = 20;
  cfg.test_query_count = 10;
  cfg.click_count = 64;
  cfg.topic_count = 5;
  Rng rng(31);
  const SyntheticWorld w = SyntheticWorld::generate(cfg, rng);

  EncoderConfig ecfg = tiny_encoder_config();
  Rng enc_rng(4);
  const Encoder enc = Encoder::init(ecfg, enc_rng);
  std::vector<Embedding> serving;
  for (const auto& ad : w.ads) {
    serving.push_back(f32_grid(enc.serving_embedding(ad.text)));
  }
  std::vector<std::vector<float>> stored;
  for (const auto& e : serving) stored.push_back(to_f32(e));

  TierOne tier1;
  Rng pq_rng(5);
  tier1.codebook = train_pq(serving, 2, 32, 6, pq_rng);
  tier1.count = serving.size();
  tier1.codes = encode_corpus(tier1.codebook, serving);

  BuildParams params;
  params.max_degree = 10;
  params.build_queue = 20;
  Rng graph_rng(6);
  const VamanaGraph graph = build_vamana(serving, params, graph_rng);
  std::vector<ItemId> ids(serving.size());
  for (ItemId i = 0; i < ids.size(); ++i) ids[i] = i;
  write_index(dir.path, stored, graph, tier1, ids);

  std::vector<Embedding> queries;
  for (int i = 0; i < 10; ++i) {
    queries.push_back(enc.serving_embedding(w.queries[i].text));
  }
  const auto rows = bench_index(tier1, postings_path(dir.path), queries,
                                {16, 64}, {10, 100});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "L=16");
  CHECK(rows[1].method == "L=64");
  for (const auto& row : rows) {
    CHECK(row.sector_reads_per_query > 0.0);
    CHECK(row.p95_micros >= row.p50_micros);
    CHECK(row.recall_at.at(10) >= 0.0);
    CHECK(row.recall_at.at(10) <= 1.0);
  }
  // a bigger queue never hurts recall@10 here
  CHECK(rows[1].recall_at.at(10) >= rows[0].recall_at.at(10) - 1e-9);

  // code-only recall is within [0, 1] and sane on this tiny index
  const double cr =
      code_recall_at_k(tier1, stored, queries, 10);
  CHECK(cr >= 0.0);
  CHECK(cr <= 1.0);
}
