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
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ebr/harness.hpp"
#include "ebr/serialize.hpp"

namespace ebr {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Deterministic standard-normal noise for a (query, ad) pair.
double pair_noise(std::uint64_t salt, std::uint64_t q, std::uint64_t a) {
  const std::uint64_t h1 = hash64(hash_combine(hash_combine(salt, q), a));
  const std::uint64_t h2 = hash64(h1);
  const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::string topic_token(std::uint32_t topic, std::uint32_t word) {
  return "t" + std::to_string(topic) + "w" + std::to_string(word);
}

TopicMix draw_mix(std::uint32_t topic_count, Rng& rng) {
  TopicMix mix;
  mix.first = static_cast<std::uint32_t>(rng.bounded(topic_count));
  if (rng.uniform() < 0.5) {
    mix.second = static_cast<std::uint32_t>(rng.bounded(topic_count));
    mix.first_weight =
        mix.second == mix.first ? 1.0 : 0.5 + 0.5 * rng.uniform();
  } else {
    mix.second = mix.first;
    mix.first_weight = 1.0;
  }
  return mix;
}

std::string draw_text(const TopicMix& mix, std::uint32_t tokens_per_topic,
                      Rng& rng) {
  const std::uint32_t count = 3 + static_cast<std::uint32_t>(rng.bounded(6));
  std::string text;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t topic =
        rng.uniform() < mix.first_weight ? mix.first : mix.second;
    if (!text.empty()) text += ' ';
    text += topic_token(topic,
                        static_cast<std::uint32_t>(rng.bounded(tokens_per_topic)));
  }
  return text;
}

}  // namespace

double SyntheticWorld::planted_relevance(double affinity, double gamma,
                                         double noise) {
  return sigmoid(gamma * affinity + noise);
}

Embedding SyntheticWorld::mix_vector(const TopicMix& mix) const {
  Embedding out(cfg.topic_dim, 0.0);
  const Embedding& a = topics[mix.first];
  const Embedding& b = topics[mix.second];
  const double wa = mix.first_weight;
  const double wb = mix.first == mix.second ? 0.0 : 1.0 - mix.first_weight;
  for (std::uint32_t i = 0; i < cfg.topic_dim; ++i) {
    out[i] = wa * a[i] + wb * b[i];
  }
  return out;
}

double SyntheticWorld::topic_affinity(const TopicMix& q,
                                      const TopicMix& a) const {
  return inner_product(mix_vector(q), mix_vector(a));
}

double SyntheticWorld::relevance(std::uint64_t query_idx, ItemId ad_idx) const {
  const double noise =
      cfg.noise_sigma == 0.0
          ? 0.0
          : cfg.noise_sigma * pair_noise(noise_salt, query_idx, ad_idx);
  return planted_relevance(
      topic_affinity(queries[query_idx].mix, ads[ad_idx].mix), cfg.gamma,
      noise);
}

double SyntheticWorld::click_prob(std::uint64_t query_idx,
                                  ItemId ad_idx) const {
  return relevance(query_idx, ad_idx) * (0.3 + 0.7 * ads[ad_idx].popularity);
}

RankInputs SyntheticWorld::rank_inputs(std::uint64_t query_idx,
                                       ItemId ad_idx) const {
  return RankInputs{click_prob(query_idx, ad_idx), relevance(query_idx, ad_idx),
                    ads[ad_idx].bid};
}

double SyntheticWorld::psi_score(std::uint64_t query_idx, ItemId ad_idx) const {
  return psi(rank_inputs(query_idx, ad_idx));
}

std::vector<std::uint64_t> SyntheticWorld::test_query_indices() const {
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = cfg.train_query_count; i < queries.size(); ++i) {
    out.push_back(i);
  }
  return out;
}

std::vector<std::string> SyntheticWorld::ad_texts() const {
  std::vector<std::string> out;
  out.reserve(ads.size());
  for (const WorldAd& ad : ads) out.push_back(ad.text);
  return out;
}

std::vector<ClickRecord> SyntheticWorld::click_records() const {
  std::vector<ClickRecord> out;
  out.reserve(clicks.size());
  for (const WorldClick& c : clicks) {
    out.push_back(
        ClickRecord{queries[c.query].text, ads[c.ad].text, c.shard});
  }
  return out;
}

SyntheticWorld SyntheticWorld::generate(const WorldConfig& cfg, Rng& rng) {
  if (cfg.ad_count < 200) {
    throw std::invalid_argument(
        "SyntheticWorld: need at least 200 ads (hard-negative mining "
        "samples a Top-200 neighborhood)");
  }
  if (cfg.topic_count == 0 || cfg.topic_dim == 0) {
    throw std::invalid_argument("SyntheticWorld: degenerate topic setup");
  }

  SyntheticWorld w;
  w.cfg = cfg;
  w.noise_salt = hash64(rng.seed());

  for (std::uint32_t t = 0; t < cfg.topic_count; ++t) {
    Embedding v(cfg.topic_dim);
    for (double& x : v) x = rng.normal();
    w.topics.push_back(l2_normalize(v));
  }

  std::set<std::string> used_texts;
  w.ads.reserve(cfg.ad_count);
  for (std::uint32_t i = 0; i < cfg.ad_count; ++i) {
    WorldAd ad;
    ad.mix = draw_mix(cfg.topic_count, rng);
    ad.popularity = rng.uniform();
    ad.bid = rng.lognormal(cfg.bid_mu, cfg.bid_sigma);
    // The leading token is the ad's stable identity (its "merchant" handle);
    // the rest are topical tokens.
    ad.text = "a" + std::to_string(i) + " " +
              draw_text(ad.mix, cfg.tokens_per_topic, rng);
    used_texts.insert(ad.text);
    w.ads.push_back(std::move(ad));
  }

  const std::uint64_t total_queries =
      static_cast<std::uint64_t>(cfg.train_query_count) + cfg.test_query_count;
  w.queries.reserve(total_queries);
  for (std::uint64_t i = 0; i < total_queries; ++i) {
    WorldQuery q;
    q.mix = draw_mix(cfg.topic_count, rng);
    q.test = i >= cfg.train_query_count;
    for (int attempt = 0;; ++attempt) {
      q.text = draw_text(q.mix, cfg.tokens_per_topic, rng);
      if (used_texts.insert(q.text).second) break;
      if (attempt >= 50) {
        q.text += " u" + std::to_string(i);
        used_texts.insert(q.text);
        break;
      }
    }
    w.queries.push_back(std::move(q));
  }

  // Ads carrying each topic, for the topically biased exposure draw.
  std::vector<std::vector<ItemId>> by_topic(cfg.topic_count);
  for (std::uint32_t i = 0; i < cfg.ad_count; ++i) {
    by_topic[w.ads[i].mix.first].push_back(i);
    if (w.ads[i].mix.second != w.ads[i].mix.first) {
      by_topic[w.ads[i].mix.second].push_back(i);
    }
  }

  auto draw_click_ad = [&](std::uint64_t query_idx) -> ItemId {
    const WorldQuery& q = w.queries[query_idx];
    for (int attempt = 0; attempt < 10000; ++attempt) {
      ItemId ad;
      if (rng.uniform() < cfg.topical_exposure) {
        const std::uint32_t topic =
            rng.uniform() < q.mix.first_weight ? q.mix.first : q.mix.second;
        const auto& pool = by_topic[topic];
        ad = pool.empty() ? rng.bounded(cfg.ad_count)
                          : pool[rng.bounded(pool.size())];
      } else {
        ad = rng.bounded(cfg.ad_count);
      }
      if (rng.uniform() < w.click_prob(query_idx, ad)) {
        return ad;
      }
    }
    throw std::runtime_error(
        "SyntheticWorld: no click accepted after 10000 impressions");
  };

  w.clicks.reserve(cfg.click_count);
  for (std::uint32_t c = 0; c < cfg.click_count; ++c) {
    const std::uint64_t query_idx = rng.bounded(cfg.train_query_count);
    const ItemId ad = draw_click_ad(query_idx);
    w.clicks.push_back(WorldClick{query_idx, ad, c % cfg.shard_stripes});
    if (w.queries[query_idx].clicked == kNoNeighbor) {
      w.queries[query_idx].clicked = ad;
    }
  }
  for (std::uint64_t i = cfg.train_query_count; i < total_queries; ++i) {
    w.queries[i].clicked = draw_click_ad(i);
  }
  return w;
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

namespace {

void write_string(std::ostream& out, const std::string& s) {
  io::write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  const std::uint32_t n = io::read_u32(in, what);
  std::string s(n, '\0');
  io::read_exact(in, s.data(), n, what);
  return s;
}

void write_mix(std::ostream& out, const TopicMix& mix) {
  io::write_u32(out, mix.first);
  io::write_u32(out, mix.second);
  io::write_u64(out, std::bit_cast<std::uint64_t>(mix.first_weight));
}

TopicMix read_mix(std::istream& in, const std::string& what) {
  TopicMix mix;
  mix.first = io::read_u32(in, what);
  mix.second = io::read_u32(in, what);
  mix.first_weight = std::bit_cast<double>(io::read_u64(in, what));
  return mix;
}

void write_double(std::ostream& out, double v) {
  io::write_u64(out, std::bit_cast<std::uint64_t>(v));
}

double read_double(std::istream& in, const std::string& what) {
  return std::bit_cast<double>(io::read_u64(in, what));
}

}  // namespace

void save_world(const SyntheticWorld& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("save_world: cannot open " + path.string());
  }
  io::write_magic(out, "URWD");
  io::write_u32(out, 1);
  io::write_u32(out, w.cfg.topic_count);
  io::write_u32(out, w.cfg.topic_dim);
  io::write_u32(out, w.cfg.ad_count);
  io::write_u32(out, w.cfg.train_query_count);
  io::write_u32(out, w.cfg.test_query_count);
  io::write_u32(out, w.cfg.click_count);
  write_double(out, w.cfg.gamma);
  write_double(out, w.cfg.noise_sigma);
  io::write_u32(out, w.cfg.tokens_per_topic);
  io::write_u32(out, w.cfg.shard_stripes);
  write_double(out, w.cfg.topical_exposure);
  write_double(out, w.cfg.bid_mu);
  write_double(out, w.cfg.bid_sigma);
  io::write_u64(out, w.noise_salt);

  for (const Embedding& t : w.topics) {
    for (double v : t) write_double(out, v);
  }
  for (const WorldAd& ad : w.ads) {
    write_mix(out, ad.mix);
    write_double(out, ad.popularity);
    write_double(out, ad.bid);
    write_string(out, ad.text);
  }
  io::write_u64(out, w.queries.size());
  for (const WorldQuery& q : w.queries) {
    write_mix(out, q.mix);
    write_string(out, q.text);
    io::write_u64(out, q.clicked);
    io::write_u32(out, q.test ? 1 : 0);
  }
  io::write_u64(out, w.clicks.size());
  for (const WorldClick& c : w.clicks) {
    io::write_u64(out, c.query);
    io::write_u64(out, c.ad);
    io::write_u32(out, c.shard);
  }
  if (!out) {
    throw std::runtime_error("save_world: write failed for " + path.string());
  }
}

SyntheticWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("load_world: cannot open " + path.string());
  }
  const std::string what = "world " + path.string();
  io::expect_magic(in, "URWD", what);
  io::expect_version(in, 1, what);

  SyntheticWorld w;
  w.cfg.topic_count = io::read_u32(in, what);
  w.cfg.topic_dim = io::read_u32(in, what);
  w.cfg.ad_count = io::read_u32(in, what);
  w.cfg.train_query_count = io::read_u32(in, what);
  w.cfg.test_query_count = io::read_u32(in, what);
  w.cfg.click_count = io::read_u32(in, what);
  w.cfg.gamma = read_double(in, what);
  w.cfg.noise_sigma = read_double(in, what);
  w.cfg.tokens_per_topic = io::read_u32(in, what);
  w.cfg.shard_stripes = io::read_u32(in, what);
  w.cfg.topical_exposure = read_double(in, what);
  w.cfg.bid_mu = read_double(in, what);
  w.cfg.bid_sigma = read_double(in, what);
  w.noise_salt = io::read_u64(in, what);

  w.topics.resize(w.cfg.topic_count, Embedding(w.cfg.topic_dim));
  for (Embedding& t : w.topics) {
    for (double& v : t) v = read_double(in, what);
  }
  w.ads.resize(w.cfg.ad_count);
  for (WorldAd& ad : w.ads) {
    ad.mix = read_mix(in, what);
    ad.popularity = read_double(in, what);
    ad.bid = read_double(in, what);
    ad.text = read_string(in, what);
  }
  w.queries.resize(io::read_u64(in, what));
  for (WorldQuery& q : w.queries) {
    q.mix = read_mix(in, what);
    q.text = read_string(in, what);
    q.clicked = io::read_u64(in, what);
    q.test = io::read_u32(in, what) != 0;
  }
  w.clicks.resize(io::read_u64(in, what));
  for (WorldClick& c : w.clicks) {
    c.query = io::read_u64(in, what);
    c.ad = io::read_u64(in, what);
    c.shard = io::read_u32(in, what);
  }
  return w;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_world_tsvs(const SyntheticWorld& w,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  {
    std::ofstream out(dir / "corpus.tsv");
    for (std::size_t i = 0; i < w.ads.size(); ++i) {
      out << i << '\t' << format_double(w.ads[i].popularity) << '\t'
          << format_double(w.ads[i].bid) << '\t' << w.ads[i].text << '\n';
    }
  }
  {
    std::ofstream out(dir / "queries.tsv");
    for (std::size_t i = 0; i < w.queries.size(); ++i) {
      const WorldQuery& q = w.queries[i];
      out << i << '\t' << (q.test ? "test" : "train") << '\t';
      if (q.clicked == kNoNeighbor) {
        out << '-';
      } else {
        out << q.clicked;
      }
      out << '\t' << q.text << '\n';
    }
  }
  {
    std::ofstream out(dir / "clicks.tsv");
    for (const WorldClick& c : w.clicks) {
      out << w.queries[c.query].text << '\t' << w.ads[c.ad].text << '\t'
          << c.shard << '\n';
    }
  }
  {
    std::ofstream out(dir / "teacher_scores.tsv");
    for (const WorldClick& c : w.clicks) {
      out << c.query << '\t' << c.ad << '\t'
          << format_double(w.relevance(c.query, c.ad)) << '\n';
    }
  }
  {
    // Planted rank inputs for each test query: its topical neighborhood plus
    // a deterministic random sample of the rest of the corpus.
    std::ofstream out(dir / "rank_source.tsv");
    Rng sample_rng(w.noise_salt);
    for (std::uint64_t qi : w.test_query_indices()) {
      std::set<ItemId> cover;
      const TopicMix& mix = w.queries[qi].mix;
      for (std::size_t a = 0; a < w.ads.size(); ++a) {
        const TopicMix& am = w.ads[a].mix;
        if (am.first == mix.first || am.first == mix.second ||
            am.second == mix.first || am.second == mix.second) {
          cover.insert(a);
        }
      }
      for (int i = 0; i < 100; ++i) {
        cover.insert(sample_rng.bounded(w.ads.size()));
      }
      for (ItemId a : cover) {
        const RankInputs r = w.rank_inputs(qi, a);
        out << qi << '\t' << a << '\t' << format_double(r.ctr) << '\t'
            << format_double(r.rel) << '\t' << format_double(r.bid) << '\n';
      }
    }
  }
}

PlantedTeacher::PlantedTeacher(const SyntheticWorld& world) : world_(&world) {
  for (std::size_t i = 0; i < world.queries.size(); ++i) {
    query_by_text_.emplace(world.queries[i].text, i);
  }
  for (std::size_t i = 0; i < world.ads.size(); ++i) {
    ad_by_text_.emplace(world.ads[i].text, i);
  }
}

double PlantedTeacher::score(const std::string& query,
                             const std::string& ad) const {
  const auto q = query_by_text_.find(query);
  const auto a = ad_by_text_.find(ad);
  if (q == query_by_text_.end() || a == ad_by_text_.end()) {
    throw std::runtime_error("PlantedTeacher: unknown query or ad text");
  }
  return world_->relevance(q->second, a->second);
}

}  // namespace ebr
