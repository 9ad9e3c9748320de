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
#include "ebr/rerank.hpp"
#include "test_util.hpp"

using namespace ebr;
using namespace ebr::testutil;

TEST_CASE("psi stand-in") {
  CHECK(psi({0.1, 0.8, std::exp(1.0) - 1.0}) ==
        doctest::Approx(0.08).epsilon(1e-12));
  CHECK(psi({0.0, 0.9, 2.0}) == 0.0);

  CHECK_THROWS_AS(psi({1.2, 0.5, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(psi({0.5, -0.1, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(psi({0.5, 0.5, 0.0}), std::invalid_argument);

  // strictly increasing in every coordinate
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    RankInputs x{0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform(),
                 0.1 + 5.0 * rng.uniform()};
    const double base = psi(x);
    RankInputs up = x;
    up.ctr = std::min(1.0, x.ctr + 0.05);
    CHECK(psi(up) > base);
    up = x;
    up.rel = std::min(1.0, x.rel + 0.05);
    CHECK(psi(up) > base);
    up = x;
    up.bid = x.bid + 0.5;
    CHECK(psi(up) > base);
  }
}

TEST_CASE("tsv rank source rejects unknown pairs") {
  TempDir dir("ebr_rank_tsv");
  const auto path = dir.path / "ranks.tsv";
  {
    std::ofstream out(path);
    out << "3\t14\t0.5\t0.75\t2.0\n";
  }
  TsvRankSource src(path);
  const RankInputs r = src.get(3, 14);
  CHECK(r.ctr == 0.5);
  CHECK(r.rel == 0.75);
  CHECK(r.bid == 2.0);
  CHECK_THROWS_WITH_AS(src.get(3, 15), doctest::Contains("no inputs"),
                       std::runtime_error);
}

TEST_CASE("rank regression gradients match finite differences") {
  Rng rng(5);
  for (int instance = 0; instance < 5; ++instance) {
    EncoderConfig cfg = tiny_encoder_config();
    Rng enc_rng(60 + instance);
    Encoder enc = Encoder::init(cfg, enc_rng);
    const std::string q = random_text(rng);
    std::vector<std::string> cands;
    std::vector<double> targets;
    for (int c = 0; c < 5; ++c) {
      cands.push_back(random_text(rng));
      targets.push_back(rng.uniform());
    }
    EncoderGrad grad(cfg);
    rank_regression_loss(enc, q, cands, targets, &grad);
    const double err = max_grad_rel_err(enc, grad, [&]() {
      return rank_regression_loss(enc, q, cands, targets, nullptr);
    });
    CHECK(err < 1e-4);
  }
}

namespace {

// A small planted world with its serving index on disk, shared by the
// pipeline tests.
struct PipelineFixture {
  TempDir dir{"ebr_rerank_pipeline"};
  WorldConfig wcfg;
  SyntheticWorld world;
  Encoder enc;
  std::vector<std::string> ads;
  TierOne tier1;

  PipelineFixture()
      : wcfg([] {
          WorldConfig c;
          c.ad_count = 400;
          c.train_query_count = 150;
          c.test_query_count = 40;
          c.click_count = 600;
          c.topic_count = 8;
          return c;
        }()),
        world([&] {
          Rng rng(11);
          return SyntheticWorld::generate(wcfg, rng);
        }()),
        enc([&] {
          EncoderConfig ecfg = tiny_encoder_config();
          ecfg.embed_dim = 8;
          TrainConfig tcfg;
          tcfg.epochs = 2;
          tcfg.batch_size = 16;
          tcfg.learning_rate = 0.4;
          tcfg.seed = 5;
          const PlantedTeacher teacher(world);
          return train(world.click_records(), world.ad_texts(), teacher,
                       ecfg, tcfg);
        }()),
        ads(world.ad_texts()) {
    std::vector<Embedding> serving;
    for (const auto& text : ads) {
      serving.push_back(f32_grid(enc.serving_embedding(text)));
    }
    std::vector<std::vector<float>> stored;
    for (const auto& e : serving) stored.push_back(to_f32(e));

    Rng pq_rng(7);
    tier1.codebook = train_pq(serving, 4, 64, 8, pq_rng);
    tier1.count = serving.size();
    tier1.codes = encode_corpus(tier1.codebook, serving);

    BuildParams params;
    params.max_degree = 12;
    params.build_queue = 24;
    Rng graph_rng(9);
    const VamanaGraph graph = build_vamana(serving, params, graph_rng);
    std::vector<ItemId> ids(serving.size());
    for (ItemId i = 0; i < ids.size(); ++i) ids[i] = i;
    write_index(dir.path / "index", stored, graph, tier1, ids);
  }
};

}  // namespace

TEST_CASE("pipelines: tri-stage, base and adapted bi-stage") {
  PipelineFixture fx;
  const PlantedRankSource ranks(fx.world);
  const auto index_dir = fx.dir.path / "index";

  SearchParams params;
  params.k = 32;
  params.queue_size = 32;

  const std::uint64_t test_q = fx.world.train_query_count();
  const Embedding q_serving =
      fx.enc.serving_embedding(fx.world.queries[test_q].text);

  SUBCASE("constant psi keeps the post-verification order") {
    class Constant final : public RankSource {
     public:
      RankInputs get(ItemId, ItemId) const override {
        return RankInputs{0.5, 0.5, 1.0};
      }
    };
    PostingReader r1(postings_path(index_dir));
    PostingReader r2(postings_path(index_dir));
    const RankedList base = base_stage(fx.tier1, r1, q_serving, params);
    Constant constant;
    const RankedList tri =
        tri_stage(fx.tier1, r2, test_q, q_serving, params, constant);
    REQUIRE(tri.items.size() == base.items.size());
    for (std::size_t i = 0; i < tri.items.size(); ++i) {
      CHECK(tri.items[i].id == base.items[i].id);
    }
    CHECK(tri.psi_evals == tri.items.size());
  }

  SUBCASE("tri-stage sorts by psi") {
    PostingReader reader(postings_path(index_dir));
    const RankedList tri =
        tri_stage(fx.tier1, reader, test_q, q_serving, params, ranks);
    for (std::size_t i = 1; i < tri.items.size(); ++i) {
      CHECK(tri.items[i - 1].score >= tri.items[i].score);
    }
    for (const RankedItem& item : tri.items) {
      CHECK(item.score ==
            doctest::Approx(fx.world.psi_score(test_q, item.id))
                .epsilon(1e-9));
    }
  }

  SUBCASE("adaptation improves the psi alignment and bi-stage skips psi") {
    // rank head adaptation on the training queries
    std::vector<AdaptQuery> train_queries;
    for (std::uint64_t qi = 0; qi < 60; ++qi) {
      train_queries.push_back(AdaptQuery{qi, fx.world.queries[qi].text});
    }
    AdaptConfig acfg;
    acfg.epochs = 6;
    acfg.learning_rate = 0.05;
    acfg.first_stage.queue_size = 48;
    acfg.first_stage.k = 48;
    acfg.head_sample = 24;
    acfg.tail_sample = 24;

    // Spearman correlation between rank-head similarity and psi, before.
    auto mean_spearman = [&](const Encoder& e) {
      double total = 0.0;
      int counted = 0;
      PostingReader reader(postings_path(index_dir));
      for (std::uint64_t qi = fx.world.train_query_count();
           qi < fx.world.train_query_count() + 20; ++qi) {
        const Embedding serving =
            e.serving_embedding(fx.world.queries[qi].text);
        SearchParams sp;
        sp.k = 48;
        sp.queue_size = 48;
        const SearchResult res = search(fx.tier1, reader, serving, sp);
        if (res.items.size() < 3) continue;
        const Embedding qr = e.embed_rank(fx.world.queries[qi].text);
        std::vector<double> sim, truth;
        for (const SearchHit& hit : res.items) {
          sim.push_back(inner_product(qr, e.embed_rank(fx.ads[hit.id])));
          truth.push_back(fx.world.psi_score(qi, hit.id));
        }
        total += spearman(sim, truth);
        counted++;
      }
      return total / counted;
    };

    const double before = mean_spearman(fx.enc);
    Encoder adapted = fx.enc;
    PostingReader reader(postings_path(index_dir));
    const AdaptReport report = adapt_to_rank(
        adapted, fx.tier1, reader, train_queries, fx.ads, ranks, acfg);
    CHECK(report.queries_used > 0);
    CHECK(report.final_loss < report.first_loss);
    const double after = mean_spearman(adapted);
    CHECK(after > before);

    // only the rank head moved
    CHECK(adapted.w_rel == fx.enc.w_rel);
    CHECK(adapted.w_ctr == fx.enc.w_ctr);
    CHECK(adapted.w1 == fx.enc.w1);
    bool rank_moved = false;
    for (std::size_t i = 0; i < adapted.w_rank.size(); ++i) {
      if (adapted.w_rank[i] != fx.enc.w_rank[i]) rank_moved = true;
    }
    CHECK(rank_moved);

    // zero learning rate: nothing moves
    Encoder still = fx.enc;
    AdaptConfig frozen = acfg;
    frozen.learning_rate = 0.0;
    PostingReader reader2(postings_path(index_dir));
    adapt_to_rank(still, fx.tier1, reader2, train_queries, fx.ads, ranks,
                  frozen);
    CHECK(still.w_rank == fx.enc.w_rank);

    // adapted index: tier-two vectors from the rank head, codes untouched
    const auto adapted_dir = fx.dir.path / "adapted";
    write_adapted_index(index_dir, adapted_dir, adapted, fx.ads);
    {
      std::ifstream a(codes_path(index_dir), std::ios::binary);
      std::ifstream b(codes_path(adapted_dir), std::ios::binary);
      const std::string ca((std::istreambuf_iterator<char>(a)),
                           std::istreambuf_iterator<char>());
      const std::string cb((std::istreambuf_iterator<char>(b)),
                           std::istreambuf_iterator<char>());
      CHECK(ca == cb);
    }

    PostingReader adapted_reader(postings_path(adapted_dir));
    const Embedding q_rank =
        adapted.embed_rank(fx.world.queries[test_q].text);
    const RankedList bi = bi_stage(fx.tier1, adapted_reader, q_serving,
                                   q_rank, params);
    CHECK(bi.psi_evals == 0);
    REQUIRE(!bi.items.empty());
    // bi-stage scores are rank-head inner products over the adapted vectors
    const auto rank_of = adapted_reader.rank_of(bi.items[0].id);
    REQUIRE(rank_of.has_value());
    const Embedding stored_vec =
        f32_grid(adapted.embed_rank(fx.ads[*rank_of]));
    CHECK(bi.items[0].score ==
          doctest::Approx(inner_product(q_rank, stored_vec)).epsilon(1e-6));
  }
}

TEST_CASE("identity adaptation: bi-stage equals the base order") {
  PipelineFixture fx;
  const auto index_dir = fx.dir.path / "index";
  // Rewrite tier-two with vectors identical to serving: set the rank head so
  // embed_rank == serving_embedding is impossible in general, so instead
  // copy the index and verify with route == verify queries.
  PostingReader r1(postings_path(index_dir));
  PostingReader r2(postings_path(index_dir));
  SearchParams params;
  params.k = 16;
  params.queue_size = 24;
  const Embedding q = fx.enc.serving_embedding(
      fx.world.queries[fx.world.train_query_count() + 1].text);
  const RankedList base = base_stage(fx.tier1, r1, q, params);
  const RankedList bi = bi_stage(fx.tier1, r2, q, q, params);
  REQUIRE(base.items.size() == bi.items.size());
  for (std::size_t i = 0; i < base.items.size(); ++i) {
    CHECK(base.items[i].id == bi.items[i].id);
    CHECK(base.items[i].score == bi.items[i].score);
  }
}
