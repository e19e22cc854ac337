/*
 * Copyright 2026 The Fedgraph Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "fedgraph/detail/crc32c.hpp"
#include "fedgraph/errors.hpp"
#include "fedgraph/params.hpp"

namespace fedgraph {

// Store frame layout (all integers little-endian):
//   magic "FSGW"
//   u16 store version
//   u32 group count
//   per group: u16 name length, name bytes (UTF-8), u8 frozen, u8 rank,
//              u32 dims[rank], f64 values (little-endian)
//   u32 CRC32C over all preceding bytes

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& buf, std::uint16_t v) {
  buf.push_back(static_cast<std::uint8_t>(v & 0xFF));
  buf.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::vector<std::uint8_t>& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw Error(Errc::MalformedFrame, "frame truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const ParamStore& store) {
  for (const auto& g : store.groups) {
    for (double v : g.values) {
      if (!std::isfinite(v)) {
        throw Error(Errc::NonFinite, "group '" + g.name + "' holds a non-finite value");
      }
    }
    if (g.name.size() > 0xFFFF) throw Error(Errc::MalformedFrame, "group name too long");
    if (g.shape.size() > 0xFF) throw Error(Errc::MalformedFrame, "group rank too large");
  }
  if (store.version > 0xFFFF) throw Error(Errc::MalformedFrame, "store version exceeds u16");

  std::vector<std::uint8_t> buf;
  buf.push_back('F');
  buf.push_back('S');
  buf.push_back('G');
  buf.push_back('W');
  detail::put_u16(buf, static_cast<std::uint16_t>(store.version));
  detail::put_u32(buf, static_cast<std::uint32_t>(store.groups.size()));
  for (const auto& g : store.groups) {
    detail::put_u16(buf, static_cast<std::uint16_t>(g.name.size()));
    buf.insert(buf.end(), g.name.begin(), g.name.end());
    buf.push_back(g.frozen ? 1 : 0);
    buf.push_back(static_cast<std::uint8_t>(g.shape.size()));
    for (auto d : g.shape) detail::put_u32(buf, d);
    for (double v : g.values) detail::put_f64(buf, v);
  }
  const std::uint32_t crc = detail::crc32c(buf.data(), buf.size());
  detail::put_u32(buf, crc);
  return buf;
}

inline ParamStore deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 14) throw Error(Errc::MalformedFrame, "frame too short");
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
    }
    return v;
  }();
  const std::uint32_t actual_crc = detail::crc32c(bytes.data(), bytes.size() - 4);
  if (stored_crc != actual_crc) {
    throw Error(Errc::ChecksumMismatch, "frame checksum does not match");
  }

  detail::Reader r(bytes.data(), bytes.size() - 4);
  if (r.bytes(4) != "FSGW") throw Error(Errc::MalformedFrame, "bad magic");
  ParamStore store;
  store.version = r.u16();
  const std::uint32_t n_groups = r.u32();
  for (std::uint32_t gi = 0; gi < n_groups; ++gi) {
    const std::uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    const std::uint8_t frozen = r.u8();
    if (frozen > 1) throw Error(Errc::MalformedFrame, "bad frozen flag");
    const std::uint8_t rank = r.u8();
    std::vector<std::uint32_t> shape(rank);
    std::uint64_t count = 1;
    for (int d = 0; d < rank; ++d) {
      shape[d] = r.u32();
      if (shape[d] == 0) throw Error(Errc::MalformedFrame, "zero dimension");
      count *= shape[d];
      if (count > (1ULL << 32)) throw Error(Errc::MalformedFrame, "group too large");
    }
    if (count * 8 > r.remaining()) throw Error(Errc::MalformedFrame, "frame truncated");
    std::vector<double> values(count);
    for (std::uint64_t k = 0; k < count; ++k) {
      values[k] = r.f64();
      if (!std::isfinite(values[k])) {
        throw Error(Errc::NonFinite, "group '" + name + "' holds a non-finite value");
      }
    }
    store.add(std::move(name), std::move(shape), std::move(values), frozen == 1);
  }
  if (r.remaining() != 0) throw Error(Errc::MalformedFrame, "trailing bytes");
  return store;
}

}  // namespace fedgraph
