#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cdraw/tensor.hpp"

namespace cdraw {

// Flat binary tensor container. Layout, all little-endian:
//   magic "CDCK", u32 version,
//   per entry: u32 name length, name bytes, u32 rank, u64 dims..., f32 data.
// Entries repeat until EOF. Round-trips bit-exactly.

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw std::runtime_error(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  os.write("CDCK", 4);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  for (auto& [name, t] : entries) {
    detail::write_pod<uint32_t>(os, (uint32_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    detail::write_pod<uint32_t>(os, (uint32_t)t->rank());
    for (int i = 0; i < t->rank(); ++i) detail::write_pod<uint64_t>(os, (uint64_t)t->dim(i));
    os.write(reinterpret_cast<const char*>(t->data()), (std::streamsize)(t->size() * 4));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CDCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = detail::read_pod<uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    uint32_t nlen = 0;
    if (!is.read(reinterpret_cast<char*>(&nlen), 4)) break;  // clean EOF
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen))
      throw std::runtime_error("checkpoint: truncated name in " + path);
    uint32_t rank = detail::read_pod<uint32_t>(is, "rank");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i)
      shape.push_back((int64_t)detail::read_pod<uint64_t>(is, "dim"));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), (std::streamsize)(t.size() * 4)))
      throw std::runtime_error("checkpoint: truncated data for " + name + " in " + path);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace cdraw
