#pragma once
// Versioned binary container for named fp64 matrices plus a key=value text
// trailer. Layout: "HCKP" magic, u32 version, u32 tensor count, then per
// tensor a u32 name length + name bytes, u64 rows, u64 cols, row-major f64
// payload; finally u64 trailer length + trailer bytes.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hetcan/common.hpp"
#include "hetcan/tensor.hpp"

namespace hetcan {

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string meta;  // key=value lines

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail_ckpt {
constexpr char kMagic[4] = {'H', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("checkpoint: truncated while reading " + what);
  return v;
}
}  // namespace detail_ckpt

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint file " + path);
  os.write(detail_ckpt::kMagic, 4);
  detail_ckpt::put<std::uint32_t>(os, detail_ckpt::kVersion);
  detail_ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    detail_ckpt::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail_ckpt::put<std::uint64_t>(os, static_cast<std::uint64_t>(t.rows()));
    detail_ckpt::put<std::uint64_t>(os, static_cast<std::uint64_t>(t.cols()));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  }
  detail_ckpt::put<std::uint64_t>(os, static_cast<std::uint64_t>(ckpt.meta.size()));
  os.write(ckpt.meta.data(), static_cast<std::streamsize>(ckpt.meta.size()));
  if (!os) throw DataError("short write while saving checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint file " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, detail_ckpt::kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto version = detail_ckpt::take<std::uint32_t>(is, "version");
  if (version != detail_ckpt::kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail_ckpt::take<std::uint32_t>(is, "tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail_ckpt::take<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw DataError("checkpoint: truncated tensor name");
    const auto rows = detail_ckpt::take<std::uint64_t>(is, "rows of " + name);
    const auto cols = detail_ckpt::take<std::uint64_t>(is, "cols of " + name);
    Tensor t(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(double) * rows * cols)))
      throw DataError("checkpoint: truncated payload of " + name);
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  const auto meta_len = detail_ckpt::take<std::uint64_t>(is, "trailer length");
  ckpt.meta.resize(meta_len);
  if (meta_len > 0 && !is.read(ckpt.meta.data(), static_cast<std::streamsize>(meta_len)))
    throw DataError("checkpoint: truncated trailer");
  return ckpt;
}

}  // namespace hetcan
