// Copyright 2026 The GPSMamba Authors. All Rights Reserved.
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


// Checkpoint container:
//   "GPSMCKPT" | u32 version | u64 len | config text
//   u64 count | count x (u64 len | name | u32 rank | rank x u64 dim | f64 data)
// Integers and doubles are little-endian; entries are in sorted-name order.

#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "gpsmamba/config.hpp"

namespace gpsmamba {

inline constexpr char kCheckpointMagic[8] = {'G', 'P', 'S', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  ModelParams params;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated reading ") + what, pos_);
  }
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = serialize(ck.config);
  detail::put<std::uint64_t>(out, cfg.size());
  out.insert(out.end(), cfg.begin(), cfg.end());
  detail::put<std::uint64_t>(out, ck.params.size());
  for (const auto& [name, t] : ck.params) {
    detail::put<std::uint64_t>(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(out, d);
    for (double v : t.data()) detail::put<double>(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::Reader r(bytes);
  if (r.bytes(8, "magic") != std::string(kCheckpointMagic, 8)) throw ParseError("checkpoint: bad magic", 0);
  const std::size_t vpos = r.pos();
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), vpos);
  }
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint64_t>("config length");
  const std::size_t cfg_pos = r.pos();
  try {
    ck.config = parse_config(r.bytes(cfg_len, "config"));
  } catch (const ParseError& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), cfg_pos);
  }
  const auto count = r.get<std::uint64_t>("entry count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint64_t>("name length");
    std::string name = r.bytes(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError("checkpoint: bad rank for '" + name + "'", r.pos());
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dim");
      if (d == 0 || d > (1u << 28)) throw ParseError("checkpoint: bad extent for '" + name + "'", r.pos());
    }
    Tensor t(shape);
    for (double& v : t.data()) v = r.get<double>("data");
    if (!ck.params.emplace(std::move(name), std::move(t)).second) {
      throw ParseError("checkpoint: duplicate entry", r.pos());
    }
  }
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", r.pos());
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace gpsmamba
