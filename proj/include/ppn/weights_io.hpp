#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "ppn/graph.hpp"

namespace ppn {

// PPNW weights container, version 1, little-endian:
//   "PPNW"  u32 version  u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data
inline constexpr char kWeightsMagic[4] = {'P', 'P', 'N', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF),
               char((v >> 24) & 0xFF)};
  out.write(b, 4);
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated weights file " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
         (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void save_weights(const std::string& path, const WeightStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weights file " + path);
  out.write(kWeightsMagic, 4);
  detail::write_u32(out, kWeightsVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& [name, p] : store.entries()) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(p.dims.size()));
    for (std::uint32_t d : p.dims) detail::write_u32(out, d);
    static_assert(sizeof(float) == 4);
    for (float v : p.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::write_u32(out, bits);
    }
  }
  if (!out) throw std::runtime_error("short write to weights file " + path);
}

inline WeightStore load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weights file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw std::runtime_error(path + " is not a PPNW weights file");
  }
  const std::uint32_t version = detail::read_u32(in, path);
  if (version != kWeightsVersion) {
    throw std::runtime_error("unsupported weights version " +
                             std::to_string(version) + " in " + path);
  }
  const std::uint32_t count = detail::read_u32(in, path);
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::read_u32(in, path);
    if (name_len > 4096) {
      throw std::runtime_error("implausible name length in " + path);
    }
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw std::runtime_error("truncated weights file " + path);
    const std::uint32_t rank = detail::read_u32(in, path);
    if (rank < 1 || rank > 4) {
      throw std::runtime_error("parameter " + name + " has unsupported rank");
    }
    Param p;
    std::uint64_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = detail::read_u32(in, path);
      p.dims.push_back(d);
      total *= d;
    }
    if (total > (1ULL << 28)) {
      throw std::runtime_error("parameter " + name + " is implausibly large");
    }
    p.data.resize(total);
    for (std::uint64_t j = 0; j < total; ++j) {
      const std::uint32_t bits = detail::read_u32(in, path);
      std::memcpy(&p.data[j], &bits, 4);
    }
    if (store.has(name)) {
      throw std::runtime_error("duplicate parameter " + name + " in " + path);
    }
    store.put(name, std::move(p));
  }
  return store;
}

}  // namespace ppn
