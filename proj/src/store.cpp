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

#include "ebr/store.hpp"

#include <stdexcept>
#include <string>

#include "ebr/serialize.hpp"

namespace ebr {

void write_postings(const std::filesystem::path& path,
                    const std::vector<std::vector<float>>& vectors,
                    const VamanaGraph& graph, std::span<const ItemId> ids,
                    std::uint32_t align) {
  const std::uint64_t n = vectors.size();
  if (graph.size() != n || ids.size() != n) {
    throw std::invalid_argument(
        "write_postings: vector/graph/id counts disagree (" +
        std::to_string(n) + ", " + std::to_string(graph.size()) + ", " +
        std::to_string(ids.size()) + ")");
  }
  if (n == 0) {
    throw std::invalid_argument("write_postings: empty index");
  }
  if (align == 0) {
    throw std::invalid_argument("write_postings: align must be > 0");
  }

  PostingLayout layout;
  layout.count = n;
  layout.dim = static_cast<std::uint32_t>(vectors.front().size());
  layout.max_degree = graph.max_degree;
  layout.align = align;
  layout.entry_rank = graph.entry_point;

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_postings: cannot open " + path.string());
  }

  std::uint64_t written = 0;
  auto pad_to = [&](std::uint64_t target) {
    static const char zeros[512] = {};
    while (written < target) {
      const std::uint64_t chunk =
          std::min<std::uint64_t>(sizeof(zeros), target - written);
      out.write(zeros, static_cast<std::streamsize>(chunk));
      written += chunk;
    }
  };

  io::write_magic(out, "URPL");
  io::write_u32(out, 1);
  io::write_u64(out, layout.count);
  io::write_u32(out, layout.dim);
  io::write_u32(out, layout.max_degree);
  io::write_u32(out, layout.align);
  io::write_u64(out, layout.entry_rank);
  written = 4 + 4 + 8 + 4 + 4 + 4 + 8;
  for (ItemId id : ids) {
    io::write_u64(out, id);
    written += 8;
  }
  pad_to(layout.header_bytes());

  for (std::uint64_t rank = 0; rank < n; ++rank) {
    if (vectors[rank].size() != layout.dim) {
      throw std::invalid_argument("write_postings: inconsistent dimensions");
    }
    const auto& nbrs = graph.adjacency[rank];
    if (nbrs.size() > layout.max_degree) {
      throw std::invalid_argument("write_postings: node " +
                                  std::to_string(rank) +
                                  " exceeds the degree bound");
    }
    io::write_u64(out, ids[rank]);
    for (float v : vectors[rank]) {
      io::write_f32(out, v);
    }
    io::write_u32(out, static_cast<std::uint32_t>(nbrs.size()));
    for (std::uint32_t i = 0; i < layout.max_degree; ++i) {
      io::write_u64(out, i < nbrs.size() ? ids[nbrs[i]] : kNoNeighbor);
    }
    written += layout.record_bytes();
    pad_to(layout.record_offset(rank + 1));
  }
  if (!out) {
    throw std::runtime_error("write_postings: write failed for " +
                             path.string());
  }
}

PostingReader::PostingReader(const std::filesystem::path& path)
    : path_(path), file_(path, std::ios::binary) {
  if (!file_) {
    throw std::runtime_error("posting list: cannot open " + path.string());
  }
  const std::string what = "posting list " + path.string();
  io::expect_magic(file_, "URPL", what);
  io::expect_version(file_, 1, what);
  layout_.count = io::read_u64(file_, what);
  layout_.dim = io::read_u32(file_, what);
  layout_.max_degree = io::read_u32(file_, what);
  layout_.align = io::read_u32(file_, what);
  if (layout_.align == 0) {
    throw std::runtime_error(what + ": zero alignment");
  }
  layout_.entry_rank = io::read_u64(file_, what);
  if (layout_.entry_rank >= layout_.count) {
    throw std::runtime_error(what + ": entry rank out of bounds");
  }
  ids_.resize(layout_.count);
  rank_index_.reserve(layout_.count);
  for (std::uint64_t r = 0; r < layout_.count; ++r) {
    ids_[r] = io::read_u64(file_, what);
    rank_index_.emplace(ids_[r], r);
  }

  file_.seekg(0, std::ios::end);
  const std::uint64_t actual = static_cast<std::uint64_t>(file_.tellg());
  if (actual != layout_.file_bytes()) {
    throw std::runtime_error(what + ": file length " + std::to_string(actual) +
                             " does not match layout (expected " +
                             std::to_string(layout_.file_bytes()) + ")");
  }
}

std::optional<std::uint64_t> PostingReader::rank_of(ItemId id) const {
  auto it = rank_index_.find(id);
  if (it == rank_index_.end()) return std::nullopt;
  return it->second;
}

PostingRecord PostingReader::read_record(std::uint64_t rank) {
  if (rank >= layout_.count) {
    throw std::out_of_range("read_record: rank " + std::to_string(rank) +
                            " out of bounds (N=" +
                            std::to_string(layout_.count) + ")");
  }
  const std::string what = "posting record " + std::to_string(rank);
  file_.seekg(static_cast<std::streamoff>(layout_.record_offset(rank)));
  PostingRecord rec;
  rec.id = io::read_u64(file_, what);
  rec.vector.resize(layout_.dim);
  for (std::uint32_t i = 0; i < layout_.dim; ++i) {
    rec.vector[i] = io::read_f32(file_, what);
  }
  const std::uint32_t nbr_count = io::read_u32(file_, what);
  if (nbr_count > layout_.max_degree) {
    throw std::runtime_error(what + ": neighbor count exceeds degree bound");
  }
  rec.neighbors.reserve(nbr_count);
  for (std::uint32_t i = 0; i < layout_.max_degree; ++i) {
    const ItemId nbr = io::read_u64(file_, what);
    if (i < nbr_count) {
      if (nbr == kNoNeighbor) {
        throw std::runtime_error(what + ": sentinel inside live neighbors");
      }
      rec.neighbors.push_back(nbr);
    }
  }
  sector_reads_ += layout_.sectors_per_record();
  return rec;
}

void write_index(const std::filesystem::path& dir,
                 const std::vector<std::vector<float>>& vectors,
                 const VamanaGraph& graph, const TierOne& tier1,
                 std::span<const ItemId> ids, std::uint32_t align) {
  if (tier1.count != vectors.size() ||
      tier1.codes.size() != tier1.count * tier1.codebook.sub_count) {
    throw std::invalid_argument("write_index: tier-one size mismatch (N=" +
                                std::to_string(vectors.size()) + ", codes=" +
                                std::to_string(tier1.codes.size()) + ")");
  }
  std::filesystem::create_directories(dir);
  write_postings(postings_path(dir), vectors, graph, ids, align);
  save_codebook(tier1.codebook, codebook_path(dir));
  save_codes(tier1.codes, tier1.count, tier1.codebook.sub_count,
             codes_path(dir));
}

TierOne load_tier_one(const std::filesystem::path& cb_path,
                      const std::filesystem::path& code_path) {
  TierOne t;
  t.codebook = load_codebook(cb_path);
  std::uint32_t sub_count = 0;
  t.codes = load_codes(code_path, &t.count, &sub_count);
  if (sub_count != t.codebook.sub_count) {
    throw std::runtime_error(
        "load_tier_one: code store sub-codebook count " +
        std::to_string(sub_count) + " does not match codebook " +
        std::to_string(t.codebook.sub_count));
  }
  return t;
}

}  // namespace ebr
