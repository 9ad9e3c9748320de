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

#include "ebr/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace ebr {

double psi(const RankInputs& x) {
  if (x.ctr < 0.0 || x.ctr > 1.0) {
    throw std::invalid_argument("psi: ctr outside [0, 1]");
  }
  if (x.rel < 0.0 || x.rel > 1.0) {
    throw std::invalid_argument("psi: rel outside [0, 1]");
  }
  if (!(x.bid > 0.0)) {
    throw std::invalid_argument("psi: bid must be positive");
  }
  return x.ctr * x.rel * std::log1p(x.bid);
}

TsvRankSource::TsvRankSource(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("TsvRankSource: cannot open " + path.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ItemId q, a;
    RankInputs r;
    if (!(ls >> q >> a >> r.ctr >> r.rel >> r.bid)) {
      throw std::runtime_error("TsvRankSource: malformed line: " + line);
    }
    rows_[{q, a}] = r;
  }
}

RankInputs TsvRankSource::get(ItemId query_id, ItemId ad_id) const {
  auto it = rows_.find({query_id, ad_id});
  if (it == rows_.end()) {
    throw std::runtime_error("rank source: no inputs for query " +
                             std::to_string(query_id) + ", ad " +
                             std::to_string(ad_id));
  }
  return it->second;
}

RankedList base_stage(const TierOne& tier1, PostingReader& reader,
                      const Embedding& query_serving,
                      const SearchParams& params) {
  const SearchResult res = search(tier1, reader, query_serving, params);
  RankedList out;
  out.search_stats = res.stats;
  out.items.reserve(res.items.size());
  for (const SearchHit& hit : res.items) {
    out.items.push_back(RankedItem{hit.id, hit.score});
  }
  return out;
}

RankedList tri_stage(const TierOne& tier1, PostingReader& reader,
                     ItemId query_id, const Embedding& query_serving,
                     const SearchParams& params, const RankSource& ranks) {
  RankedList out = base_stage(tier1, reader, query_serving, params);
  for (RankedItem& item : out.items) {
    item.score = psi(ranks.get(query_id, item.id));
    out.psi_evals++;
  }
  std::stable_sort(out.items.begin(), out.items.end(),
                   [](const RankedItem& a, const RankedItem& b) {
                     return a.score > b.score;
                   });
  return out;
}

RankedList bi_stage(const TierOne& tier1, PostingReader& adapted_reader,
                    const Embedding& query_serving,
                    const Embedding& query_rank, const SearchParams& params) {
  const SearchResult res =
      search(tier1, adapted_reader, query_serving, query_rank, params);
  RankedList out;
  out.search_stats = res.stats;
  out.items.reserve(res.items.size());
  for (const SearchHit& hit : res.items) {
    out.items.push_back(RankedItem{hit.id, hit.score});
  }
  return out;  // psi_evals stays 0: re-ranking lives in the index now
}

double rank_regression_loss(const Encoder& enc, const std::string& query_text,
                            const std::vector<std::string>& candidate_texts,
                            const std::vector<double>& targets,
                            EncoderGrad* grad, double scale) {
  if (candidate_texts.size() != targets.size() || candidate_texts.empty()) {
    throw std::invalid_argument("rank_regression_loss: shape mismatch");
  }
  const Encoder::Activations act_q = enc.backbone_forward(query_text);
  const Embedding eq = enc.head_forward(act_q, Head::rank);

  double loss = 0.0;
  std::vector<double> d_eq(eq.size(), 0.0);
  const double w = scale / static_cast<double>(candidate_texts.size());
  for (std::size_t c = 0; c < candidate_texts.size(); ++c) {
    const Encoder::Activations act_a = enc.backbone_forward(candidate_texts[c]);
    const Embedding ea = enc.head_forward(act_a, Head::rank);
    const double r = inner_product(eq, ea) - targets[c];
    loss += w * r * r;
    if (grad != nullptr) {
      const double d_sim = 2.0 * w * r;
      std::vector<double> d_ea(ea.size());
      for (std::size_t x = 0; x < ea.size(); ++x) {
        d_eq[x] += d_sim * ea[x];
        d_ea[x] = d_sim * eq[x];
      }
      backprop_head(enc, act_a, Head::rank, d_ea, *grad);
    }
  }
  if (grad != nullptr) {
    backprop_head(enc, act_q, Head::rank, d_eq, *grad);
  }
  return loss;
}

namespace {

void keep_rank_head_only(EncoderGrad& grad, bool train_backbone) {
  std::fill(grad.w_rel.begin(), grad.w_rel.end(), 0.0);
  std::fill(grad.w_ctr.begin(), grad.w_ctr.end(), 0.0);
  if (!train_backbone) {
    std::fill(grad.b1.begin(), grad.b1.end(), 0.0);
    std::fill(grad.w2.begin(), grad.w2.end(), 0.0);
    std::fill(grad.b2.begin(), grad.b2.end(), 0.0);
    grad.w1_cols.clear();
  }
}

}  // namespace

AdaptReport adapt_to_rank(Encoder& enc, const TierOne& tier1,
                          PostingReader& reader,
                          const std::vector<AdaptQuery>& queries,
                          const std::vector<std::string>& ad_texts,
                          const RankSource& ranks, const AdaptConfig& cfg) {
  AdaptReport report;
  Rng sample_rng = Rng(cfg.seed).fork(21);

  struct Task {
    std::string query_text;
    std::vector<std::string> candidates;
    std::vector<double> targets;
  };
  std::vector<Task> tasks;
  tasks.reserve(queries.size());

  for (const AdaptQuery& q : queries) {
    const Embedding serving = enc.serving_embedding(q.text);
    SearchParams first = cfg.first_stage;
    first.k = first.queue_size;  // the whole verified queue
    const SearchResult res = search(tier1, reader, serving, first);
    if (res.items.size() < 2) {
      report.queries_skipped++;
      std::cerr << "[adapt_to_rank] query " << q.id
                << " has fewer than 2 first-stage candidates; skipped\n";
      continue;
    }

    // Head of the list plus a uniform sample of the tail: adaptation needs
    // local discrimination across the whole candidate range.
    std::vector<std::size_t> picked;
    const std::size_t head = std::min(cfg.head_sample, res.items.size());
    for (std::size_t i = 0; i < head; ++i) picked.push_back(i);
    const std::size_t tail_pool = res.items.size() - head;
    const std::size_t tail = std::min(cfg.tail_sample, tail_pool);
    if (tail > 0) {
      for (std::uint64_t off :
           sample_rng.sample_without_replacement(tail_pool, tail)) {
        picked.push_back(head + off);
      }
    }

    Task task;
    task.query_text = q.text;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::vector<double> raw;
    for (std::size_t idx : picked) {
      const ItemId ad = res.items[idx].id;
      const auto rank_of = reader.rank_of(ad);
      if (!rank_of.has_value()) {
        throw std::runtime_error("adapt_to_rank: unknown ad id " +
                                 std::to_string(ad));
      }
      const double score = psi(ranks.get(q.id, ad));
      raw.push_back(score);
      lo = std::min(lo, score);
      hi = std::max(hi, score);
      task.candidates.push_back(ad_texts[*rank_of]);
    }
    if (!(hi - lo > 1e-12)) {
      report.queries_skipped++;
      std::cerr << "[adapt_to_rank] query " << q.id
                << " has a degenerate psi range; skipped\n";
      continue;
    }
    task.targets.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      task.targets[i] = (raw[i] - lo) / (hi - lo);
    }
    tasks.push_back(std::move(task));
    report.queries_used++;
  }

  if (tasks.empty()) {
    return report;
  }
  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const Task& task : tasks) {
      EncoderGrad grad(enc.cfg);
      epoch_loss += rank_regression_loss(enc, task.query_text, task.candidates,
                                         task.targets, &grad);
      keep_rank_head_only(grad, cfg.train_backbone);
      apply_gradient(enc, grad, cfg.learning_rate);
    }
    epoch_loss /= static_cast<double>(tasks.size());
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("adapt_to_rank: loss diverged at epoch " +
                               std::to_string(epoch));
    }
    if (epoch == 0) report.first_loss = epoch_loss;
    report.final_loss = epoch_loss;
  }
  return report;
}

void write_adapted_index(const std::filesystem::path& src_dir,
                         const std::filesystem::path& dst_dir,
                         const Encoder& enc,
                         const std::vector<std::string>& ad_texts) {
  PostingReader reader(postings_path(src_dir));
  if (reader.count() != ad_texts.size()) {
    throw std::invalid_argument(
        "write_adapted_index: corpus size does not match the index");
  }

  // Rebuild the graph structure from the stored records so the adjacency is
  // byte-identical to the source index.
  VamanaGraph graph;
  graph.max_degree = reader.layout().max_degree;
  graph.entry_point = reader.entry_rank();
  graph.adjacency.resize(reader.count());
  std::vector<std::vector<float>> vectors(reader.count());
  for (std::uint64_t rank = 0; rank < reader.count(); ++rank) {
    PostingRecord rec = reader.read_record(rank);
    auto& adj = graph.adjacency[rank];
    adj.reserve(rec.neighbors.size());
    for (ItemId nbr : rec.neighbors) {
      const auto r = reader.rank_of(nbr);
      if (!r.has_value()) {
        throw std::runtime_error("write_adapted_index: unknown neighbor id");
      }
      adj.push_back(*r);
    }
    vectors[rank] = to_f32(f32_grid(enc.embed_rank(ad_texts[rank])));
  }

  std::filesystem::create_directories(dst_dir);
  write_postings(postings_path(dst_dir), vectors, graph, reader.ids(),
                 reader.layout().align);
  // Tier one is unchanged: routing stays in the serving space.
  std::filesystem::copy_file(codebook_path(src_dir), codebook_path(dst_dir),
                             std::filesystem::copy_options::overwrite_existing);
  std::filesystem::copy_file(codes_path(src_dir), codes_path(dst_dir),
                             std::filesystem::copy_options::overwrite_existing);
}

}  // namespace ebr
