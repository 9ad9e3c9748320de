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

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ebr/harness.hpp"
#include "ebr/mopq.hpp"
#include "ebr/rerank.hpp"

namespace {

using namespace ebr;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      return cols;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<std::string> load_corpus_texts(const std::filesystem::path& dir) {
  std::ifstream in(dir / "corpus.tsv");
  if (!in) {
    throw std::runtime_error("cannot open " + (dir / "corpus.tsv").string());
  }
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 4) {
      throw std::runtime_error("corpus.tsv: expected 4 columns, got " +
                               std::to_string(cols.size()));
    }
    const std::uint64_t id = std::stoull(cols[0]);
    if (id != texts.size()) {
      throw std::runtime_error("corpus.tsv: ids must be dense and in order");
    }
    texts.push_back(cols[3]);
  }
  return texts;
}

std::vector<ClickRecord> load_clicks(const std::filesystem::path& dir) {
  std::ifstream in(dir / "clicks.tsv");
  if (!in) {
    throw std::runtime_error("cannot open " + (dir / "clicks.tsv").string());
  }
  std::vector<ClickRecord> clicks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() != 3) {
      throw std::runtime_error("clicks.tsv: expected 3 columns");
    }
    clicks.push_back(ClickRecord{
        cols[0], cols[1], static_cast<std::uint32_t>(std::stoul(cols[2]))});
  }
  return clicks;
}

struct QueryRow {
  ItemId id;
  std::string text;
};

// Accepts either "id \t text" or the 4-column queries.tsv layout.
std::vector<QueryRow> load_query_file(const std::filesystem::path& path,
                                      const std::string& split_filter = "") {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<QueryRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    if (cols.size() == 2) {
      rows.push_back(QueryRow{std::stoull(cols[0]), cols[1]});
    } else if (cols.size() == 4) {
      if (!split_filter.empty() && cols[1] != split_filter) continue;
      rows.push_back(QueryRow{std::stoull(cols[0]), cols[3]});
    } else {
      throw std::runtime_error("query file: expected 2 or 4 columns");
    }
  }
  return rows;
}

NegativeFilter parse_filter(const std::string& name) {
  if (name == "none") return NegativeFilter::none;
  if (name == "score") return NegativeFilter::score;
  if (name == "rank") return NegativeFilter::rank;
  throw CLI::ValidationError("--filter must be none|score|rank");
}

std::unique_ptr<Teacher> make_teacher(const std::filesystem::path& data_dir,
                                      const std::string& scores_tsv,
                                      const SyntheticWorld*& world_out,
                                      std::optional<SyntheticWorld>& world) {
  if (!scores_tsv.empty()) {
    std::map<std::string, std::uint64_t> query_ids, ad_ids;
    for (const QueryRow& q : load_query_file(data_dir / "queries.tsv")) {
      query_ids.emplace(q.text, q.id);
    }
    std::ifstream in(data_dir / "corpus.tsv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cols = split_tabs(line);
      ad_ids.emplace(cols[3], std::stoull(cols[0]));
    }
    world_out = nullptr;
    return std::make_unique<TsvTeacher>(scores_tsv, std::move(query_ids),
                                        std::move(ad_ids));
  }
  world.emplace(load_world(data_dir / "world.bin"));
  world_out = &*world;
  return std::make_unique<PlantedTeacher>(*world);
}

std::vector<Embedding> serving_corpus(const Encoder& enc,
                                      const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    out.push_back(f32_grid(enc.serving_embedding(t)));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::filesystem::path& out_dir, std::uint64_t seed,
            const WorldConfig& cfg, bool tsv) {
  Rng rng(seed);
  const SyntheticWorld world = SyntheticWorld::generate(cfg, rng);
  std::filesystem::create_directories(out_dir);
  save_world(world, out_dir / "world.bin");
  if (tsv) {
    write_world_tsvs(world, out_dir);
    std::ofstream out(out_dir / "eval_queries.tsv");
    for (std::uint64_t qi : world.test_query_indices()) {
      out << qi << '\t' << world.queries[qi].text << '\n';
    }
  }
  std::cerr << "generated " << world.ads.size() << " ads, "
            << world.queries.size() << " queries, " << world.clicks.size()
            << " clicks -> " << out_dir.string() << "\n";
  return 0;
}

int cmd_train(const std::filesystem::path& data_dir,
              const std::filesystem::path& model_out,
              const std::string& teacher_tsv, const EncoderConfig& enc_cfg,
              const TrainConfig& cfg) {
  const auto corpus = load_corpus_texts(data_dir);
  const auto clicks = load_clicks(data_dir);
  std::optional<SyntheticWorld> world;
  const SyntheticWorld* world_ptr = nullptr;
  const auto teacher = make_teacher(data_dir, teacher_tsv, world_ptr, world);

  const Encoder enc = train(clicks, corpus, *teacher, enc_cfg, cfg);
  save_encoder(enc, model_out);
  std::cerr << "trained on " << clicks.size() << " clicks -> "
            << model_out.string() << "\n";
  return 0;
}

struct BuildOptions {
  std::uint32_t sub_count = 8;
  std::uint32_t words_per_sub = 256;
  std::uint32_t pq_iters = 15;
  std::uint32_t max_degree = 32;
  std::uint32_t build_queue = 64;
  double alpha = 1.2;
  std::uint32_t align = 4096;
  bool mopq = false;
  MopqConfig mopq_cfg;
};

int cmd_build(const std::filesystem::path& data_dir,
              const std::filesystem::path& model_path,
              const std::filesystem::path& out_dir, std::uint64_t seed,
              const BuildOptions& opt) {
  Encoder enc = load_encoder(model_path);
  const auto texts = load_corpus_texts(data_dir);
  std::vector<Embedding> vectors = serving_corpus(enc, texts);

  Rng pq_rng = Rng(seed).fork(31);
  Codebook cb = train_pq(vectors, opt.sub_count, opt.words_per_sub,
                         opt.pq_iters, pq_rng);
  if (opt.mopq) {
    std::vector<TextPair> pairs;
    for (const ClickRecord& c : load_clicks(data_dir)) {
      pairs.push_back(TextPair{c.query, c.positive});
    }
    MopqConfig mcfg = opt.mopq_cfg;
    mcfg.seed = seed;
    cb = train_mopq(pairs, enc, cb, mcfg);
    if (mcfg.train_heads || mcfg.train_backbone) {
      // joint training moved the embeddings; refresh them and keep the
      // updated encoder next to the index
      vectors = serving_corpus(enc, texts);
      std::filesystem::create_directories(out_dir);
      save_encoder(enc, out_dir / "encoder.enc");
    }
  }

  TierOne tier1;
  tier1.codebook = cb;
  tier1.count = vectors.size();
  tier1.codes = encode_corpus(cb, vectors);

  BuildParams params;
  params.max_degree = opt.max_degree;
  params.build_queue = opt.build_queue;
  params.alpha = opt.alpha;
  Rng graph_rng = Rng(seed).fork(32);
  const VamanaGraph graph = build_vamana(vectors, params, graph_rng);

  std::vector<std::vector<float>> stored;
  stored.reserve(vectors.size());
  for (const auto& v : vectors) stored.push_back(to_f32(v));
  std::vector<ItemId> ids(vectors.size());
  for (ItemId i = 0; i < ids.size(); ++i) ids[i] = i;
  write_index(out_dir, stored, graph, tier1, ids, opt.align);
  std::cerr << "indexed " << vectors.size() << " vectors -> "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_search(const std::filesystem::path& index_dir,
               const std::filesystem::path& model_path,
               const std::filesystem::path& query_file, std::size_t k,
               std::size_t queue, std::size_t beam, bool stats,
               const std::string& out_path) {
  const Encoder enc = load_encoder(model_path);
  const TierOne tier1 =
      load_tier_one(codebook_path(index_dir), codes_path(index_dir));
  PostingReader reader(postings_path(index_dir));
  const auto queries = load_query_file(query_file, "test");

  std::ostringstream out;
  for (const QueryRow& q : queries) {
    SearchParams params;
    params.k = k;
    params.queue_size = queue;
    params.beam_width = beam;
    const SearchResult res =
        search(tier1, reader, enc.serving_embedding(q.text), params);
    for (std::size_t rank = 0; rank < res.items.size(); ++rank) {
      out << q.id << '\t' << rank + 1 << '\t' << res.items[rank].id << '\t'
          << fmt(res.items[rank].score);
      if (stats) {
        out << '\t' << res.stats.hops << '\t' << res.stats.sector_reads
            << '\t' << res.stats.pq_evals << '\t' << res.stats.exact_evals;
      }
      out << '\n';
    }
  }
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(out_path);
    f << out.str();
  }
  return 0;
}

int cmd_adapt(const std::filesystem::path& index_dir,
              const std::filesystem::path& model_path,
              const std::filesystem::path& data_dir,
              const std::filesystem::path& out_dir, const std::string& ranks,
              std::size_t query_count, const AdaptConfig& cfg) {
  Encoder enc = load_encoder(model_path);
  const TierOne tier1 =
      load_tier_one(codebook_path(index_dir), codes_path(index_dir));
  PostingReader reader(postings_path(index_dir));
  const auto texts = load_corpus_texts(data_dir);

  std::unique_ptr<RankSource> source;
  std::optional<SyntheticWorld> world;
  if (!ranks.empty()) {
    source = std::make_unique<TsvRankSource>(ranks);
  } else {
    world.emplace(load_world(data_dir / "world.bin"));
    source = std::make_unique<PlantedRankSource>(*world);
  }

  std::vector<AdaptQuery> train_queries;
  if (world.has_value()) {
    for (std::uint64_t qi = 0;
         qi < std::min<std::uint64_t>(query_count, world->train_query_count());
         ++qi) {
      train_queries.push_back(AdaptQuery{qi, world->queries[qi].text});
    }
  } else {
    for (const QueryRow& q : load_query_file(data_dir / "queries.tsv",
                                             "train")) {
      if (train_queries.size() == query_count) break;
      train_queries.push_back(AdaptQuery{q.id, q.text});
    }
  }

  const AdaptReport report =
      adapt_to_rank(enc, tier1, reader, train_queries, texts, *source, cfg);
  std::filesystem::create_directories(out_dir);
  save_encoder(enc, out_dir / "model.enc");
  write_adapted_index(index_dir, out_dir, enc, texts);
  std::cerr << "adapted on " << report.queries_used << " queries (skipped "
            << report.queries_skipped << "), loss " << fmt(report.first_loss)
            << " -> " << fmt(report.final_loss) << "\n";
  return 0;
}

int cmd_eval(const std::filesystem::path& index_dir,
             const std::filesystem::path& model_path,
             const std::filesystem::path& data_dir, const std::string& pipeline,
             std::size_t queue, const std::vector<std::size_t>& ks,
             const std::string& out_path) {
  const Encoder enc = load_encoder(model_path);
  const TierOne tier1 =
      load_tier_one(codebook_path(index_dir), codes_path(index_dir));
  PostingReader reader(postings_path(index_dir));
  const SyntheticWorld world = load_world(data_dir / "world.bin");
  const PlantedRankSource ranks(world);
  const auto stored = load_all_vectors(postings_path(index_dir));

  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
  const std::size_t ndcg_k = 10;

  MetricReport totals;
  for (std::size_t k : ks) {
    totals.hit_at[k] = 0;
    totals.rel_at[k] = 0;
    totals.recall_at[k] = 0;
  }
  double ndcg_total = 0.0, mrr_total = 0.0;
  std::uint64_t psi_evals = 0;

  const auto test_qs = world.test_query_indices();
  for (std::uint64_t qi : test_qs) {
    const Embedding q_serving = enc.serving_embedding(world.queries[qi].text);
    SearchParams params;
    params.k = std::min(std::max(max_k, ndcg_k), queue);
    params.queue_size = queue;

    RankedList ranked;
    if (pipeline == "base") {
      ranked = base_stage(tier1, reader, q_serving, params);
    } else if (pipeline == "tri") {
      ranked = tri_stage(tier1, reader, qi, q_serving, params, ranks);
    } else if (pipeline == "bi") {
      ranked = bi_stage(tier1, reader, q_serving,
                        enc.embed_rank(world.queries[qi].text), params);
    } else {
      throw CLI::ValidationError("--pipeline must be base|tri|bi");
    }
    psi_evals += ranked.psi_evals;

    std::vector<ItemId> retrieved;
    for (const RankedItem& item : ranked.items) retrieved.push_back(item.id);

    const auto truth = brute_force(stored, q_serving, std::min(max_k,
                                                               stored.size()));
    std::vector<ItemId> truth_ids;
    for (const SearchHit& h : truth) truth_ids.push_back(h.id);

    for (std::size_t k : ks) {
      totals.hit_at[k] += hit_at_k(retrieved, world.queries[qi].clicked, k);
      totals.rel_at[k] += rel_at_k(
          retrieved, [&](ItemId a) { return world.relevance(qi, a); }, k);
      totals.recall_at[k] += recall_at_k(retrieved, truth_ids, k);
    }

    // psi ground truth over the whole corpus
    std::vector<SearchHit> psi_all(world.ads.size());
    for (std::size_t a = 0; a < world.ads.size(); ++a) {
      psi_all[a] = SearchHit{a, world.psi_score(qi, a)};
    }
    std::partial_sort(psi_all.begin(), psi_all.begin() + ndcg_k,
                      psi_all.end(), [](const SearchHit& x, const SearchHit& y) {
                        if (x.score != y.score) return x.score > y.score;
                        return x.id < y.id;
                      });
    std::vector<double> ideal;
    std::unordered_set<ItemId> relevant;
    for (std::size_t i = 0; i < ndcg_k; ++i) {
      ideal.push_back(psi_all[i].score);
      relevant.insert(psi_all[i].id);
    }
    ndcg_total += ndcg_at_k(
        retrieved, [&](ItemId a) { return world.psi_score(qi, a); }, ideal,
        ndcg_k);
    mrr_total += mrr(retrieved, relevant);
  }

  std::ostringstream out;
  const double n = static_cast<double>(test_qs.size());
  out << "pipeline\t" << pipeline << '\n';
  for (std::size_t k : ks) {
    out << "hit@" << k << '\t' << fmt(totals.hit_at[k] / n) << '\n';
  }
  for (std::size_t k : ks) {
    out << "rel@" << k << '\t' << fmt(totals.rel_at[k] / n) << '\n';
  }
  for (std::size_t k : ks) {
    out << "recall@" << k << '\t' << fmt(totals.recall_at[k] / n) << '\n';
  }
  out << "ndcg@10\t" << fmt(ndcg_total / n) << '\n';
  out << "mrr\t" << fmt(mrr_total / n) << '\n';
  out << "psi_evals\t" << psi_evals << '\n';
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(out_path);
    f << out.str();
  }
  return 0;
}

int cmd_ladder(const std::filesystem::path& data_dir,
               const std::string& out_path, const LadderConfig& cfg) {
  const SyntheticWorld world = load_world(data_dir / "world.bin");
  const auto rows = run_ladder(world, cfg);
  write_ladder_tsv(rows, cfg.eval_ks, out_path);
  std::cerr << "ladder -> " << out_path << "\n";
  return 0;
}

int cmd_bench(const std::filesystem::path& index_dir,
              const std::filesystem::path& model_path,
              const std::filesystem::path& data_dir,
              const std::vector<std::size_t>& queues,
              const std::vector<std::size_t>& ks, std::size_t query_count,
              const std::string& out_path) {
  const Encoder enc = load_encoder(model_path);
  const TierOne tier1 =
      load_tier_one(codebook_path(index_dir), codes_path(index_dir));
  const SyntheticWorld world = load_world(data_dir / "world.bin");

  std::vector<Embedding> queries;
  for (std::uint64_t qi : world.test_query_indices()) {
    if (queries.size() == query_count) break;
    queries.push_back(enc.serving_embedding(world.queries[qi].text));
  }

  const auto wall_start = std::chrono::steady_clock::now();
  const auto rows =
      bench_index(tier1, postings_path(index_dir), queries, queues, ks);
  const auto wall_end = std::chrono::steady_clock::now();

  std::ostringstream out;
  out << "method";
  for (std::size_t k : ks) out << "\trecall@" << k;
  out << "\tsector_reads/query\tp50_us\tp95_us\n";
  for (const BenchRow& row : rows) {
    out << row.method;
    for (std::size_t k : ks) out << '\t' << fmt(row.recall_at.at(k));
    out << '\t' << fmt(row.sector_reads_per_query) << '\t'
        << fmt(row.p50_micros) << '\t' << fmt(row.p95_micros) << '\n';
  }
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    std::ofstream f(out_path);
    f << out.str();
  }
  // Wall clock is informational only; the TSV carries the modeled cost.
  std::cerr << "bench wall time "
            << std::chrono::duration_cast<std::chrono::milliseconds>(
                   wall_end - wall_start)
                   .count()
            << " ms over " << queries.size() << " queries\n";
  return 0;
}

int cmd_inspect(const std::filesystem::path& path,
                std::optional<std::uint64_t> rank) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) {
    throw std::runtime_error("cannot open " + path.string());
  }
  char magic[5] = {};
  probe.read(magic, 4);
  const std::string tag(magic, 4);

  if (tag == "URPL") {
    PostingReader reader(path);
    const PostingLayout& l = reader.layout();
    std::cout << "posting list: N=" << l.count << " d=" << l.dim
              << " R=" << l.max_degree << " align=" << l.align
              << " entry_rank=" << l.entry_rank
              << " record_bytes=" << l.record_bytes()
              << " padded=" << l.padded_record_bytes()
              << " file_bytes=" << l.file_bytes() << '\n';
    if (rank.has_value()) {
      const PostingRecord rec = reader.read_record(*rank);
      std::cout << "record rank=" << *rank << " id=" << rec.id << "\nvector=";
      for (std::size_t i = 0; i < rec.vector.size(); ++i) {
        std::cout << (i == 0 ? "" : ",") << fmt(rec.vector[i]);
      }
      std::cout << "\nneighbors=";
      for (std::size_t i = 0; i < rec.neighbors.size(); ++i) {
        std::cout << (i == 0 ? "" : ",") << rec.neighbors[i];
      }
      std::cout << '\n';
    }
  } else if (tag == "URCB") {
    const Codebook cb = load_codebook(path);
    std::cout << "codebook: M=" << cb.sub_count << " P=" << cb.words_per_sub
              << " d=" << cb.dim << " bytes=" << cb.byte_size() << '\n';
  } else if (tag == "URPQ") {
    std::uint64_t n = 0;
    std::uint32_t m = 0;
    const auto codes = load_codes(path, &n, &m);
    std::cout << "code store: N=" << n << " M=" << m
              << " bytes=" << codes.size() << '\n';
    if (rank.has_value()) {
      std::cout << "code rank=" << *rank << " =";
      for (std::uint32_t i = 0; i < m; ++i) {
        std::cout << (i == 0 ? " " : ",")
                  << static_cast<int>(codes[*rank * m + i]);
      }
      std::cout << '\n';
    }
  } else if (tag == "UREN") {
    const Encoder enc = load_encoder(path);
    std::cout << "encoder: F=" << enc.cfg.feature_dim
              << " h=" << enc.cfg.hidden_dim
              << " d_raw=" << enc.cfg.backbone_dim
              << " d=" << enc.cfg.embed_dim
              << " share_heads=" << (enc.cfg.share_heads ? 1 : 0)
              << " params=" << enc.param_count() << '\n';
  } else if (tag == "URWD") {
    const SyntheticWorld w = load_world(path);
    std::cout << "world: topics=" << w.cfg.topic_count
              << " ads=" << w.ads.size() << " queries=" << w.queries.size()
              << " clicks=" << w.clicks.size() << '\n';
  } else {
    throw std::runtime_error("unknown magic \"" + tag + "\"");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-objective embedding retrieval engine"};
  app.require_subcommand(1);
  app.set_config("--config");

  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

  // gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic world");
  std::string gen_out = "data";
  WorldConfig wcfg;
  bool gen_tsv = true;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--ads", wcfg.ad_count, "corpus size");
  gen->add_option("--train-queries", wcfg.train_query_count, "");
  gen->add_option("--test-queries", wcfg.test_query_count, "");
  gen->add_option("--clicks", wcfg.click_count, "click count");
  gen->add_option("--topics", wcfg.topic_count, "topic count");
  gen->add_option("--gamma", wcfg.gamma, "relevance steepness");
  gen->add_option("--noise", wcfg.noise_sigma, "relevance noise sigma");
  gen->add_flag("!--no-tsv", gen_tsv, "skip TSV emission");

  // train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train the encoder on clicks");
  std::string tr_data, tr_model = "model.enc", tr_teacher, tr_filter = "none";
  EncoderConfig enc_cfg;
  TrainConfig tcfg;
  bool literal_denominator = false, raw_similarity = false;
  tr->add_option("--data", tr_data, "data directory")->required();
  tr->add_option("--out-model", tr_model, "model output path");
  tr->add_option("--teacher-scores", tr_teacher,
                 "external teacher TSV (q_id, a_id, score)");
  tr->add_option("--epochs", tcfg.epochs, "");
  tr->add_option("--batch", tcfg.batch_size, "triplets per step");
  tr->add_option("--shards", tcfg.shard_count, "emulated devices");
  tr->add_option("--lr", tcfg.learning_rate, "");
  tr->add_option("--momentum", tcfg.momentum, "");
  tr->add_option("--random-negatives", tcfg.random_negatives, "");
  bool random_mode = false;
  tr->add_flag("--random-negative-mode", random_mode,
               "sample per-query random negatives instead of in-batch");
  tr->add_option("--hard-negatives", tcfg.hard_negatives, "ANN negatives");
  tr->add_option("--filter", tr_filter, "none|score|rank");
  tr->add_option("--refresh-every", tcfg.refresh_every, "epochs per refresh");
  tr->add_option("--lambda-rel", tcfg.loss.lambda_rel, "distillation weight");
  tr->add_option("--temperature", tcfg.loss.temperature, "");
  tr->add_flag("--literal-denominator", literal_denominator,
               "exclude the positive from the InfoNCE denominator");
  tr->add_flag("--raw-similarity", raw_similarity,
               "raw inner products instead of normalized");
  tr->add_flag("--share-heads", enc_cfg.share_heads, "one pooling head");
  tr->add_option("--feature-dim", enc_cfg.feature_dim, "");
  tr->add_option("--hidden-dim", enc_cfg.hidden_dim, "");
  tr->add_option("--backbone-dim", enc_cfg.backbone_dim, "");
  tr->add_option("--embed-dim", enc_cfg.embed_dim, "");

  // build ----------------------------------------------------------------
  auto* bd = app.add_subcommand("build", "build the two-tier index");
  std::string bd_data, bd_model, bd_out = "index";
  BuildOptions bopt;
  bd->add_option("--data", bd_data, "data directory")->required();
  bd->add_option("--model", bd_model, "encoder file")->required();
  bd->add_option("--out", bd_out, "index directory");
  bd->add_option("--M", bopt.sub_count, "sub-codebooks");
  bd->add_option("--P", bopt.words_per_sub, "codewords per sub-codebook");
  bd->add_option("--pq-iters", bopt.pq_iters, "");
  bd->add_option("--R", bopt.max_degree, "graph degree bound");
  bd->add_option("--L", bopt.build_queue, "construction queue");
  bd->add_option("--alpha", bopt.alpha, "prune slack");
  bd->add_option("--align", bopt.align, "record alignment bytes");
  bd->add_flag("--mopq", bopt.mopq, "retrieval-trained codebooks");
  bd->add_option("--mopq-steps", bopt.mopq_cfg.steps, "");
  bd->add_option("--mopq-batch", bopt.mopq_cfg.batch_size, "");
  bd->add_option("--mopq-lr", bopt.mopq_cfg.learning_rate, "");
  bd->add_option("--mopq-temperature", bopt.mopq_cfg.temperature, "");
  bd->add_flag("--mopq-train-heads", bopt.mopq_cfg.train_heads, "");
  bd->add_flag("--mopq-train-backbone", bopt.mopq_cfg.train_backbone, "");

  // search ---------------------------------------------------------------
  auto* se = app.add_subcommand("search", "query the index");
  std::string se_index, se_model, se_queries, se_out;
  std::size_t se_k = 10, se_l = 64, se_beam = 4;
  bool se_stats = false;
  se->add_option("--index", se_index, "index directory")->required();
  se->add_option("--model", se_model, "encoder file")->required();
  se->add_option("--query-file", se_queries, "TSV id\\ttext")->required();
  se->add_option("--k", se_k, "results per query");
  se->add_option("--l", se_l, "queue size");
  se->add_option("--beam", se_beam, "records per hop");
  se->add_flag("--stats", se_stats, "append counters to each row");
  se->add_option("--out", se_out, "write TSV here instead of stdout");

  // adapt ------------------------------------------------------------------
  auto* ad = app.add_subcommand("adapt", "rank-head adaptation + index");
  std::string ad_index, ad_model, ad_data, ad_out = "adapted", ad_ranks;
  std::size_t ad_queries = 1000;
  AdaptConfig acfg;
  ad->add_option("--index", ad_index, "index directory")->required();
  ad->add_option("--model", ad_model, "encoder file")->required();
  ad->add_option("--data", ad_data, "data directory")->required();
  ad->add_option("--out", ad_out, "adapted output directory");
  ad->add_option("--ranks", ad_ranks, "rank_source TSV (default: world.bin)");
  ad->add_option("--queries", ad_queries, "adaptation query count");
  ad->add_option("--epochs", acfg.epochs, "");
  ad->add_option("--lr", acfg.learning_rate, "");
  ad->add_option("--head-sample", acfg.head_sample, "");
  ad->add_option("--tail-sample", acfg.tail_sample, "");
  ad->add_option("--l", acfg.first_stage.queue_size, "first-stage queue");

  // eval --------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a pipeline on the world");
  std::string ev_index, ev_model, ev_data, ev_pipeline = "base", ev_out;
  std::size_t ev_l = 64;
  std::vector<std::size_t> ev_ks = {10, 100, 200};
  ev->add_option("--index", ev_index, "index directory")->required();
  ev->add_option("--model", ev_model, "encoder file")->required();
  ev->add_option("--data", ev_data, "data directory")->required();
  ev->add_option("--pipeline", ev_pipeline, "base|tri|bi");
  ev->add_option("--l", ev_l, "queue size");
  ev->add_option("--k-list", ev_ks, "metric cut-offs");
  ev->add_option("--out", ev_out, "write TSV here instead of stdout");

  // ladder -------------------------------------------------------------------
  auto* la = app.add_subcommand("ladder", "train and evaluate every method");
  std::string la_data, la_out = "ladder.tsv";
  LadderConfig lcfg;
  la->add_option("--data", la_data, "data directory")->required();
  la->add_option("--out", la_out, "ladder TSV path");
  la->add_option("--epochs", lcfg.epochs, "");
  la->add_option("--batch", lcfg.base_batch, "");
  la->add_option("--lr", lcfg.learning_rate, "");
  la->add_option("--lambda-rel", lcfg.lambda_rel, "");
  la->add_option("--temperature", lcfg.temperature, "");
  la->add_option("--feature-dim", lcfg.encoder.feature_dim, "");
  la->add_option("--hidden-dim", lcfg.encoder.hidden_dim, "");
  la->add_option("--backbone-dim", lcfg.encoder.backbone_dim, "");
  la->add_option("--embed-dim", lcfg.encoder.embed_dim, "");
  bool la_verbose = false;
  la->add_flag("--verbose", la_verbose, "progress to stderr");

  // bench ---------------------------------------------------------------------
  auto* be = app.add_subcommand("bench", "index quality/cost benchmark");
  std::string be_index, be_model, be_data, be_out;
  std::vector<std::size_t> be_ls = {128, 512, 1024};
  std::vector<std::size_t> be_ks = {100, 500, 1000};
  std::size_t be_queries = 100;
  be->add_option("--index", be_index, "index directory")->required();
  be->add_option("--model", be_model, "encoder file")->required();
  be->add_option("--data", be_data, "data directory")->required();
  be->add_option("--l-list", be_ls, "queue sizes");
  be->add_option("--k-list", be_ks, "recall cut-offs");
  be->add_option("--queries", be_queries, "query count");
  be->add_option("--out", be_out, "write TSV here instead of stdout");

  // inspect ---------------------------------------------------------------
  auto* in = app.add_subcommand("inspect", "dump a binary file header");
  std::string in_file;
  std::optional<std::uint64_t> in_rank;
  std::uint64_t in_rank_raw = 0;
  in->add_option("--file", in_file, "file to inspect")->required();
  auto* rank_opt = in->add_option("--rank", in_rank_raw, "record to dump");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen(gen_out, seed, wcfg, gen_tsv);
    }
    if (tr->parsed()) {
      tcfg.seed = seed;
      tcfg.filter = parse_filter(tr_filter);
      tcfg.in_batch_negatives = !random_mode;
      tcfg.loss.include_positive = !literal_denominator;
      tcfg.loss.normalize_similarity = !raw_similarity;
      return cmd_train(tr_data, tr_model, tr_teacher, enc_cfg, tcfg);
    }
    if (bd->parsed()) {
      return cmd_build(bd_data, bd_model, bd_out, seed, bopt);
    }
    if (se->parsed()) {
      return cmd_search(se_index, se_model, se_queries, se_k, se_l, se_beam,
                        se_stats, se_out);
    }
    if (ad->parsed()) {
      acfg.seed = seed;
      acfg.first_stage.k = acfg.first_stage.queue_size;
      return cmd_adapt(ad_index, ad_model, ad_data, ad_out, ad_ranks,
                       ad_queries, acfg);
    }
    if (ev->parsed()) {
      return cmd_eval(ev_index, ev_model, ev_data, ev_pipeline, ev_l, ev_ks,
                      ev_out);
    }
    if (la->parsed()) {
      lcfg.seed = seed;
      lcfg.log_progress = la_verbose;
      return cmd_ladder(la_data, la_out, lcfg);
    }
    if (be->parsed()) {
      return cmd_bench(be_index, be_model, be_data, be_ls, be_ks, be_queries,
                       be_out);
    }
    if (in->parsed()) {
      if (rank_opt->count() > 0) in_rank = in_rank_raw;
      return cmd_inspect(in_file, in_rank);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
