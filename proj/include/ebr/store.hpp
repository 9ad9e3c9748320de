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
#include <fstream>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ebr/graph.hpp"
#include "ebr/quantizer.hpp"

namespace ebr {

// In-memory tier: the codebook plus one M-byte code per item, dense in rank
// order. This is all the RAM the corpus needs during routing.
struct TierOne {
  Codebook codebook;
  std::uint64_t count = 0;
  std::vector<std::uint8_t> codes;  // count * codebook.sub_count

  std::span<const std::uint8_t> code(std::uint64_t rank) const {
    return {codes.data() + rank * codebook.sub_count, codebook.sub_count};
  }
  std::size_t code_bytes() const { return codes.size(); }
  std::size_t resident_bytes() const {
    return code_bytes() + codebook.byte_size();
  }
};

// One tier-two record: the full-precision vector and the neighbor ids.
struct PostingRecord {
  ItemId id = kNoNeighbor;
  std::vector<float> vector;
  std::vector<ItemId> neighbors;  // real neighbors only, sentinel slots dropped
};

// Posting-list file layout (all little-endian):
//   magic "URPL" | version u32 | N u64 | d u32 | R u32 | align u32
//   entry_rank u64 | N * u64 id table | zero pad to `align`
//   N records, each zero-padded to the next multiple of `align`:
//     id u64 | d * f32 vector | neighbor_count u32 | R * u64 neighbor ids
//     (unused slots hold the all-ones sentinel)
struct PostingLayout {
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
  std::uint32_t max_degree = 0;
  std::uint32_t align = 4096;
  std::uint64_t entry_rank = 0;

  std::uint64_t record_bytes() const {
    return 8 + 4ull * dim + 4 + 8ull * max_degree;
  }
  std::uint64_t padded_record_bytes() const {
    return (record_bytes() + align - 1) / align * align;
  }
  std::uint64_t header_bytes() const {
    const std::uint64_t raw = 4 + 4 + 8 + 4 + 4 + 4 + 8 + 8ull * count;
    return (raw + align - 1) / align * align;
  }
  std::uint64_t file_bytes() const {
    return header_bytes() + count * padded_record_bytes();
  }
  std::uint64_t record_offset(std::uint64_t rank) const {
    return header_bytes() + rank * padded_record_bytes();
  }
  /// Sectors touched by one record fetch.
  std::uint64_t sectors_per_record() const {
    return padded_record_bytes() / align;
  }
};

/// Writes the posting-list file. vectors/ids/adjacency are indexed by rank.
void write_postings(const std::filesystem::path& path,
                    const std::vector<std::vector<float>>& vectors,
                    const VamanaGraph& graph, std::span<const ItemId> ids,
                    std::uint32_t align = 4096);

// Random-access reader over one open posting-list file. Each reader owns an
// independent sector-read counter; readers are not shared across threads.
class PostingReader {
 public:
  explicit PostingReader(const std::filesystem::path& path);

  const PostingLayout& layout() const { return layout_; }
  std::uint64_t count() const { return layout_.count; }
  std::uint32_t dim() const { return layout_.dim; }
  std::uint64_t entry_rank() const { return layout_.entry_rank; }

  ItemId id_of(std::uint64_t rank) const { return ids_[rank]; }
  const std::vector<ItemId>& ids() const { return ids_; }
  std::optional<std::uint64_t> rank_of(ItemId id) const;

  /// Fetches one record and charges its sectors to this handle's counter.
  PostingRecord read_record(std::uint64_t rank);

  std::uint64_t sector_reads() const { return sector_reads_; }

 private:
  std::filesystem::path path_;
  std::ifstream file_;
  PostingLayout layout_;
  std::vector<ItemId> ids_;
  std::unordered_map<ItemId, std::uint64_t> rank_index_;
  std::uint64_t sector_reads_ = 0;
};

/// Emits the full two-tier index into `dir`: postings.pl, codebook.cb,
/// codes.pqc. Sizes must agree; everything is byte-exact and little-endian.
void write_index(const std::filesystem::path& dir,
                 const std::vector<std::vector<float>>& vectors,
                 const VamanaGraph& graph, const TierOne& tier1,
                 std::span<const ItemId> ids, std::uint32_t align = 4096);

TierOne load_tier_one(const std::filesystem::path& codebook_path,
                      const std::filesystem::path& codes_path);

inline std::filesystem::path postings_path(const std::filesystem::path& dir) {
  return dir / "postings.pl";
}
inline std::filesystem::path codebook_path(const std::filesystem::path& dir) {
  return dir / "codebook.cb";
}
inline std::filesystem::path codes_path(const std::filesystem::path& dir) {
  return dir / "codes.pqc";
}

}  // namespace ebr
