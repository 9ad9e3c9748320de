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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "ebr/harness.hpp"

namespace ebr {

const char* rung_name(Rung rung) {
  switch (rung) {
    case Rung::baseline:
      return "Baseline";
    case Rung::multi_obj:
      return "+Multi-obj";
    case Rung::disentangle:
      return "+Disentangle";
    case Rung::in_batch:
      return "+In-batch";
    case Rung::cross_device:
      return "+Cross-device";
    case Rung::ann_negative:
      return "+ANN negative";
    case Rung::score_filter:
      return "+Score filter";
    case Rung::rank_filter:
      return "+Rank filter";
  }
  return "?";
}

std::vector<Rung> all_rungs() {
  return {Rung::baseline,     Rung::multi_obj,    Rung::disentangle,
          Rung::in_batch,     Rung::cross_device, Rung::ann_negative,
          Rung::score_filter, Rung::rank_filter};
}

EncoderConfig rung_encoder_config(Rung rung, const LadderConfig& cfg) {
  EncoderConfig enc = cfg.encoder;
  enc.share_heads =
      (rung == Rung::baseline || rung == Rung::multi_obj);
  return enc;
}

TrainConfig rung_train_config(Rung rung, const LadderConfig& cfg) {
  TrainConfig t;
  t.epochs = cfg.epochs;
  t.batch_size = cfg.base_batch;
  t.shard_count = 1;
  t.learning_rate = cfg.learning_rate;
  t.in_batch_negatives = false;
  t.random_negatives = cfg.random_negatives;
  t.hard_negatives = 0;
  t.filter = NegativeFilter::none;
  t.seed = cfg.seed;
  t.loss.lambda_rel = 0.0;
  t.loss.temperature = cfg.temperature;
  t.log_progress = cfg.log_progress;

  // Each rung keeps everything from the previous one and adds one change.
  switch (rung) {
    case Rung::baseline:
      break;
    case Rung::multi_obj:
      t.loss.lambda_rel = cfg.lambda_rel;
      break;
    case Rung::disentangle:
      t.loss.lambda_rel = cfg.lambda_rel;
      break;
    case Rung::in_batch:
      t.loss.lambda_rel = cfg.lambda_rel;
      t.in_batch_negatives = true;
      t.random_negatives = 0;
      break;
    case Rung::cross_device:
    case Rung::ann_negative:
    case Rung::score_filter:
    case Rung::rank_filter:
      t.loss.lambda_rel = cfg.lambda_rel;
      t.in_batch_negatives = true;
      t.random_negatives = 0;
      t.shard_count = cfg.cross_shards;
      t.batch_size = cfg.base_batch * cfg.cross_shards;
      // Linear scaling: the per-step batch grows by the shard count, so the
      // step size follows to keep the update-per-click budget comparable.
      t.learning_rate = cfg.learning_rate * cfg.cross_shards;
      break;
  }
  switch (rung) {
    case Rung::ann_negative:
      t.hard_negatives = 1;
      break;
    case Rung::score_filter:
      t.hard_negatives = 1;
      t.filter = NegativeFilter::score;
      break;
    case Rung::rank_filter:
      t.hard_negatives = 1;
      t.filter = NegativeFilter::rank;
      break;
    default:
      break;
  }
  return t;
}

MetricReport evaluate_encoder(const SyntheticWorld& world, const Encoder& enc,
                              const std::vector<std::size_t>& ks) {
  std::vector<Embedding> corpus;
  corpus.reserve(world.ads.size());
  for (const WorldAd& ad : world.ads) {
    corpus.push_back(enc.serving_embedding(ad.text));
  }
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());

  MetricReport report;
  for (std::size_t k : ks) {
    report.hit_at[k] = 0.0;
    report.rel_at[k] = 0.0;
  }
  const std::vector<std::uint64_t> tests = world.test_query_indices();
  for (std::uint64_t qi : tests) {
    const Embedding q = enc.serving_embedding(world.queries[qi].text);
    std::vector<ItemId> retrieved;
    for (const SearchHit& hit :
         brute_force(corpus, q, std::min(max_k, corpus.size()))) {
      retrieved.push_back(hit.id);
    }
    for (std::size_t k : ks) {
      report.hit_at[k] += hit_at_k(retrieved, world.queries[qi].clicked, k);
      report.rel_at[k] += rel_at_k(
          retrieved, [&](ItemId a) { return world.relevance(qi, a); }, k);
    }
  }
  for (std::size_t k : ks) {
    report.hit_at[k] /= static_cast<double>(tests.size());
    report.rel_at[k] /= static_cast<double>(tests.size());
  }
  return report;
}

std::vector<LadderRow> run_ladder(const SyntheticWorld& world,
                                  const LadderConfig& cfg) {
  const std::vector<ClickRecord> clicks = world.click_records();
  const std::vector<std::string> ads = world.ad_texts();
  const PlantedTeacher teacher(world);

  std::vector<LadderRow> rows;
  for (Rung rung : all_rungs()) {
    try {
      const Encoder enc =
          train(clicks, ads, teacher, rung_encoder_config(rung, cfg),
                rung_train_config(rung, cfg));
      rows.push_back(
          LadderRow{rung_name(rung), evaluate_encoder(world, enc, cfg.eval_ks)});
      if (cfg.log_progress) {
        std::cerr << "[ladder] " << rung_name(rung) << " hit@10 "
                  << rows.back().metrics.hit_at.at(10) << " rel@10 "
                  << rows.back().metrics.rel_at.at(10) << "\n";
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("ladder stage \"") +
                               rung_name(rung) + "\" failed: " + e.what());
    }
  }
  return rows;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_ladder_tsv(const std::vector<LadderRow>& rows,
                      const std::vector<std::size_t>& ks,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_ladder_tsv: cannot open " + path.string());
  }
  out << "method";
  for (std::size_t k : ks) out << "\thit@" << k;
  for (std::size_t k : ks) out << "\trel@" << k;
  out << '\n';
  for (const LadderRow& row : rows) {
    out << row.method;
    for (std::size_t k : ks) out << '\t' << format_double(row.metrics.hit_at.at(k));
    for (std::size_t k : ks) out << '\t' << format_double(row.metrics.rel_at.at(k));
    out << '\n';
  }
}

std::vector<std::vector<float>> load_all_vectors(
    const std::filesystem::path& postings) {
  PostingReader reader(postings);
  std::vector<std::vector<float>> out;
  out.reserve(reader.count());
  for (std::uint64_t rank = 0; rank < reader.count(); ++rank) {
    out.push_back(reader.read_record(rank).vector);
  }
  return out;
}

std::vector<BenchRow> bench_index(const TierOne& tier1,
                                  const std::filesystem::path& postings,
                                  const std::vector<Embedding>& queries,
                                  const std::vector<std::size_t>& queue_sizes,
                                  const std::vector<std::size_t>& recall_ks) {
  const std::vector<std::vector<float>> vectors = load_all_vectors(postings);
  const std::size_t max_k =
      *std::max_element(recall_ks.begin(), recall_ks.end());

  std::vector<BenchRow> rows;
  for (std::size_t queue : queue_sizes) {
    PostingReader reader(postings);
    BenchRow row;
    row.method = "L=" + std::to_string(queue);
    std::vector<double> latencies;
    double sectors = 0.0;
    for (std::size_t k : recall_ks) row.recall_at[k] = 0.0;
    for (const Embedding& q : queries) {
      SearchParams params;
      params.queue_size = queue;
      params.k = std::min(queue, vectors.size());
      const SearchResult res = search(tier1, reader, q, params);
      const auto truth =
          brute_force(vectors, q, std::min(max_k, vectors.size()));
      std::vector<ItemId> got;
      got.reserve(res.items.size());
      for (const SearchHit& hit : res.items) got.push_back(hit.id);
      std::vector<ItemId> want;
      want.reserve(truth.size());
      for (const SearchHit& hit : truth) want.push_back(hit.id);
      for (std::size_t k : recall_ks) {
        row.recall_at[k] += recall_at_k(got, want, k);
      }
      sectors += static_cast<double>(res.stats.sector_reads);
      latencies.push_back(modeled_latency_micros(res.stats));
    }
    const double nq = static_cast<double>(queries.size());
    for (std::size_t k : recall_ks) row.recall_at[k] /= nq;
    row.sector_reads_per_query = sectors / nq;
    std::sort(latencies.begin(), latencies.end());
    auto pct = [&](double p) {
      const std::size_t idx = static_cast<std::size_t>(
          p * static_cast<double>(latencies.size() - 1));
      return latencies[idx];
    };
    row.p50_micros = pct(0.50);
    row.p95_micros = pct(0.95);
    rows.push_back(std::move(row));
  }
  return rows;
}

double code_recall_at_k(const TierOne& tier1,
                        const std::vector<std::vector<float>>& vectors,
                        const std::vector<Embedding>& queries, std::size_t k) {
  const std::uint32_t m = tier1.codebook.sub_count;
  double total = 0.0;
  for (const Embedding& q : queries) {
    const AdcTable adc = build_adc(tier1.codebook, q);
    std::vector<SearchHit> approx(tier1.count);
    PqCode code(m);
    for (std::uint64_t i = 0; i < tier1.count; ++i) {
      const auto bytes = tier1.code(i);
      std::copy(bytes.begin(), bytes.end(), code.begin());
      approx[i] = SearchHit{i, approx_ip(adc, code)};
    }
    std::partial_sort(approx.begin(), approx.begin() + k, approx.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return a.id < b.id;
                      });
    approx.resize(k);
    const auto truth = brute_force(vectors, q, k);
    total += recall_against(approx, truth, k);
  }
  return total / static_cast<double>(queries.size());
}

}  // namespace ebr
