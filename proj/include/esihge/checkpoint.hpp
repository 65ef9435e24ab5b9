/* Copyright 2026 The ESI-HGE Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/

// Versioned binary parameter files. All integers and doubles little-endian.
//
//   "ESIH" u32 version  u64 N M F H E  f64 c
//   repeated until EOF:
//     u32 name_len  name  u32 rank  u64 dims[rank]  f64 values[prod(dims)]

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "esihge/errors.hpp"
#include "esihge/model.hpp"
#include "esihge/tensor.hpp"

namespace esihge {

inline constexpr std::array<char, 4> kCheckpointMagic = {'E', 'S', 'I', 'H'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint64_t n = 0;
  std::uint64_t m = 0;
  std::uint64_t f = 0;
  std::uint64_t h = 0;
  std::uint64_t e = 0;
  double c = 0.0;

  bool operator==(const CheckpointHeader&) const = default;
};

struct Checkpoint {
  CheckpointHeader header;
  NamedTensors tensors;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string where) : b_(std::move(bytes)), where_(std::move(where)) {}

  bool done() const { return pos_ == b_.size(); }

  template <class U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::string get_str(std::size_t len) {
    need(len);
    std::string s = b_.substr(pos_, len);
    pos_ += len;
    return s;
  }

 private:
  void need(std::size_t k) {
    if (b_.size() - pos_ < k) {
      throw ParseError(where_ + ": truncated checkpoint at byte " + std::to_string(pos_));
    }
  }

  std::string b_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointHeader& h, const NamedTensors& tensors) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le(out, kCheckpointVersion);
  for (std::uint64_t v : {h.n, h.m, h.f, h.h, h.e}) detail::put_le(out, v);
  detail::put_f64(out, h.c);
  for (const auto& [name, t] : tensors) {
    detail::put_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le(out, static_cast<std::uint64_t>(d));
    for (double v : t.data()) detail::put_f64(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string bytes, const std::string& where = "checkpoint") {
  detail::ByteReader r(std::move(bytes), where);
  const std::string magic = r.get_str(4);
  if (magic != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
    throw ParseError(where + ": not a parameter file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(where + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.header.n = r.get<std::uint64_t>();
  ck.header.m = r.get<std::uint64_t>();
  ck.header.f = r.get<std::uint64_t>();
  ck.header.h = r.get<std::uint64_t>();
  ck.header.e = r.get<std::uint64_t>();
  ck.header.c = r.get_f64();
  while (!r.done()) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.get_str(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 2) throw ParseError(where + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      count *= shape.back();
    }
    std::vector<double> values(count);
    for (auto& v : values) v = r.get_f64();
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& h,
                            const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(h, tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(bytes), path.string());
}

/// Copies values from `src` into the same-named leaves of `dst`. Every
/// destination tensor must be present with an identical shape.
inline void assign_named(const NamedTensors& dst, const NamedTensors& src) {
  for (const auto& [name, d] : dst) {
    const auto it = std::find_if(src.begin(), src.end(), [&](const auto& p) { return p.first == name; });
    if (it == src.end()) throw ConfigError("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape() != d.shape()) {
      throw ConfigError("tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", model expects " + shape_str(d.shape()));
    }
    Tensor target = d;
    const auto v = it->second.data();
    std::copy(v.begin(), v.end(), target.mutable_data().begin());
  }
}

}  // namespace esihge
