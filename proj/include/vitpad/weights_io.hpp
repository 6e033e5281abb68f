#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/tensor.hpp"
#include "vitpad/vit.hpp"

namespace vitpad {

// "VITW" weight container, version 1. Layout (all little-endian):
//   magic "VITW" | version u32 | entry count u32 |
//   per entry: name length u16 | name bytes (UTF-8) | dtype u8 (0 = f32) |
//              rank u8 | dims u32 × rank | payload f32 × prod(dims)
struct WeightEntry {
  std::string name;
  Shape dims;
  std::vector<float> payload;

  friend bool operator==(const WeightEntry& a, const WeightEntry& b) {
    return a.name == b.name && a.dims == b.dims && a.payload.size() == b.payload.size() &&
           (a.payload.empty() ||
            std::memcmp(a.payload.data(), b.payload.data(), a.payload.size() * sizeof(float)) == 0);
  }
};

struct WeightContainer {
  std::uint32_t version = 1;
  std::vector<WeightEntry> entries;

  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;
};

inline constexpr std::uint32_t kWeightContainerVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

inline void write_container(const WeightContainer& c, const std::string& path) {
  std::set<std::string> seen;
  for (const auto& e : c.entries) {
    if (!seen.insert(e.name).second) throw FormatError("duplicate entry name '" + e.name + "'");
    if (e.payload.size() != shape_numel(e.dims)) {
      throw DimensionError("entry '" + e.name + "' payload length does not match dims " + shape_str(e.dims));
    }
    if (e.name.size() > UINT16_MAX) throw FormatError("entry name too long: '" + e.name.substr(0, 32) + "...'");
    if (e.dims.size() > UINT8_MAX) throw FormatError("entry '" + e.name + "' has too many dimensions");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write("VITW", 4);
  io::put_u32(os, kWeightContainerVersion);
  io::put_u32(os, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    io::put_u16(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::put_u8(os, kDtypeF32);
    io::put_u8(os, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) io::put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : e.payload) io::put_f32(os, v);
  }
  os.flush();
  if (!os) throw IoError("write failure on '" + path + "'");
}

// Higher-precision parameters are narrowed to f32 on write.
template <typename T>
WeightContainer to_container(const ViTParams<T>& params) {
  WeightContainer c;
  for (const auto& [name, t] : params.tensors) {
    WeightEntry e{name, t.shape(), {}};
    e.payload.reserve(t.size());
    for (auto v : t.data()) e.payload.push_back(static_cast<float>(v));
    c.entries.push_back(std::move(e));
  }
  return c;
}

template <typename T>
void write_container(const ViTParams<T>& params, const std::string& path) {
  write_container(to_container(params), path);
}

inline WeightContainer read_container(const std::string& path) {
  const auto bytes = io::read_file_bytes(path);
  io::ByteReader r(bytes);
  if (!r.can_read(4) || std::memcmp(r.take(4).data(), "VITW", 4) != 0) {
    throw FormatError("'" + path + "' is not a VITW container (bad magic)");
  }
  if (!r.can_read(8)) throw CorruptionError("'" + path + "': truncated header");
  WeightContainer c;
  c.version = r.u32();
  if (c.version != kWeightContainerVersion) {
    throw FormatError("'" + path + "': unsupported container version " + std::to_string(c.version));
  }
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!r.can_read(2)) throw CorruptionError("'" + path + "': truncated at entry #" + std::to_string(i));
    const std::uint16_t name_len = r.u16();
    if (!r.can_read(name_len)) throw CorruptionError("'" + path + "': truncated name of entry #" + std::to_string(i));
    const auto name_bytes = r.take(name_len);
    WeightEntry e;
    e.name.assign(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(e.name).second) throw FormatError("'" + path + "': duplicate entry '" + e.name + "'");
    if (!r.can_read(2)) throw CorruptionError("'" + path + "': truncated header of entry '" + e.name + "'");
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw FormatError("'" + path + "': entry '" + e.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8();
    if (!r.can_read(4u * rank)) throw CorruptionError("'" + path + "': truncated dims of entry '" + e.name + "'");
    e.dims.resize(rank);
    for (auto& d : e.dims) {
      d = r.u32();
      if (d == 0) throw FormatError("'" + path + "': entry '" + e.name + "' has a zero dimension");
    }
    const std::size_t n = shape_numel(e.dims);
    if (r.remaining() / 4 < n) {
      throw CorruptionError("'" + path + "': truncated payload of entry '" + e.name + "' (" +
                            std::to_string(r.remaining()) + " bytes left, need " + std::to_string(n * 4) + ")");
    }
    e.payload.resize(n);
    for (auto& v : e.payload) v = r.f32();
    c.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("'" + path + "': " + std::to_string(r.remaining()) + " trailing bytes after last entry");
  }
  return c;
}

template <typename T = float>
ViTParams<T> to_params(const WeightContainer& c) {
  ViTParams<T> p;
  for (const auto& e : c.entries) {
    Tensor<float> t(e.dims, e.payload);
    p.tensors.emplace(e.name, t.template cast<T>());
  }
  return p;
}

// Reads a container and checks it against cfg: every canonical name present
// with the right shape, nothing extra.
template <typename T = float>
ViTParams<T> load_params(const std::string& path, const ViTConfig& cfg) {
  auto params = to_params<T>(read_container(path));
  params.validate(cfg);
  return params;
}

}  // namespace vitpad
