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

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>

// Little-endian binary IO. All index and model files are bit-exact across
// platforms, so byte order is handled explicitly instead of memcpy-ing
// host-order structs.
namespace ebr::io {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

inline void write_magic(std::ostream& out, const char (&tag)[5]) {
  out.write(tag, 4);
}

inline void read_exact(std::istream& in, void* dst, std::size_t n,
                       const std::string& what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw std::runtime_error("truncated read while loading " + what +
                             ": expected " + std::to_string(n) +
                             " bytes, got " + std::to_string(in.gcount()));
  }
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  read_exact(in, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  read_exact(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | b[i];
  }
  return v;
}

inline float read_f32(std::istream& in, const std::string& what) {
  const std::uint32_t bits = read_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void expect_magic(std::istream& in, const char (&tag)[5],
                         const std::string& what) {
  char got[4];
  read_exact(in, got, 4, what);
  if (std::memcmp(got, tag, 4) != 0) {
    throw std::runtime_error("bad magic while loading " + what +
                             ": expected \"" + tag + "\", got \"" +
                             std::string(got, 4) + "\"");
  }
}

inline void expect_version(std::istream& in, std::uint32_t want,
                           const std::string& what) {
  const std::uint32_t got = read_u32(in, what);
  if (got != want) {
    throw std::runtime_error("unsupported " + what + " version " +
                             std::to_string(got) + " (expected " +
                             std::to_string(want) + ")");
  }
}

}  // namespace ebr::io
