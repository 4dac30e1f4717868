/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Flat binary container for named tensors:
//
//   "GLPK1"
//   repeated until EOF:
//     u32 name length, name bytes, u32 rank, u64 extent * rank,
//     f64 element * prod(extents)
//
// All integers and reals are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "gradleak/named_tensors.hpp"

namespace gradleak {

inline constexpr char kCheckpointMagic[] = "GLPK1";

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

class LeReader {
 public:
  explicit LeReader(std::istream& is) : is_(is) {}

  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }
  std::uint64_t offset() const { return offset_; }

  void read(void* dst, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw Error(std::string("checkpoint truncated while reading ") + what + " at byte " +
                  std::to_string(offset_ + static_cast<std::uint64_t>(is_.gcount())));
    }
    offset_ += n;
  }

  template <typename T>
  T get(const char* what) {
    unsigned char buf[sizeof(T)];
    read(buf, sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{buf[i]} << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

}  // namespace detail

template <typename Tag>
void write_tensors(std::ostream& os, const NamedTensors<Tag>& set) {
  os.write(kCheckpointMagic, 5);
  for (const auto& [name, t] : set) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(os, e);
    for (double v : t.data()) detail::put_le<double>(os, v);
  }
  if (!os) throw Error("checkpoint write failed");
}

template <typename Tag>
NamedTensors<Tag> read_tensors(std::istream& is) {
  detail::LeReader in(is);
  char magic[5];
  in.read(magic, 5, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 5) != 0) throw Error("not a GLPK1 checkpoint (bad magic)");
  NamedTensors<Tag> out;
  while (!in.at_eof()) {
    const auto len = in.get<std::uint32_t>("name length");
    if (len > (1u << 20)) throw Error("checkpoint name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    in.read(name.data(), len, "name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 16) throw Error("checkpoint rank " + std::to_string(rank) + " is implausible");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(in.get<std::uint64_t>("extent"));
    Tensor t(shape);
    for (double& v : t.storage()) v = in.get<double>("element");
    out.insert(std::move(name), std::move(t));
  }
  return out;
}

template <typename Tag>
void save_tensors(const std::string& path, const NamedTensors<Tag>& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_tensors(os, set);
}

template <typename Tag>
NamedTensors<Tag> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return read_tensors<Tag>(is);
}

inline void save_params(const std::string& path, const ParamSet& p) { save_tensors(path, p); }
inline ParamSet load_params(const std::string& path) { return load_tensors<ParamTag>(path); }
inline void save_grads(const std::string& path, const GradSet& g) { save_tensors(path, g); }
inline GradSet load_grads(const std::string& path) { return load_tensors<GradTag>(path); }

}  // namespace gradleak
