#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pft/errors.hpp"
#include "pft/tensor.hpp"

namespace pft {

// On-disk tensor format:
//   8-byte magic "PFTENSOR"
//   u32 rank
//   rank x u32 extents (little-endian)
//   u32 element width in bytes (4 = IEEE-754 binary32, 8 = binary64)
//   payload: little-endian IEEE-754 scalars, row-major
static_assert(std::endian::native == std::endian::little,
              "PFTENSOR I/O assumes a little-endian host");

inline constexpr char kTensorMagic[8] = {'P', 'F', 'T', 'E', 'N', 'S', 'O', 'R'};
inline constexpr std::uint32_t kMaxTensorRank = 8;

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw integrity_error("truncated tensor file: " + path);
  }
  return v;
}

}  // namespace detail

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path.string());
  os.write(kTensorMagic, sizeof(kTensorMagic));
  detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t a = 0; a < t.rank(); ++a) {
    detail::write_u32(os, static_cast<std::uint32_t>(t.extent(a)));
  }
  detail::write_u32(os, static_cast<std::uint32_t>(sizeof(T)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(T))));
  if (!os) throw io_error("write failed: " + path.string());
}

// Loads a tensor, converting the stored width to T if they differ
// (binary32 -> binary64 is exact).
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for reading: " + path.string());

  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, 8) != 0) {
    throw integrity_error("bad magic in tensor file: " + path.string());
  }
  const std::uint32_t rank = detail::read_u32(is, path.string());
  if (rank == 0 || rank > kMaxTensorRank) {
    throw integrity_error("unreasonable rank " + std::to_string(rank) + " in " + path.string());
  }
  std::vector<std::int64_t> shape(rank);
  std::int64_t numel = 1;
  for (auto& e : shape) {
    const std::uint32_t ext = detail::read_u32(is, path.string());
    if (ext == 0) throw integrity_error("zero extent in " + path.string());
    e = static_cast<std::int64_t>(ext);
    numel *= e;
  }
  const std::uint32_t width = detail::read_u32(is, path.string());
  if (width != 4 && width != 8) {
    throw integrity_error("unsupported element width " + std::to_string(width) + " in " + path.string());
  }

  std::vector<char> payload(static_cast<std::size_t>(numel) * width);
  if (!is.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw integrity_error("truncated tensor file: " + path.string());
  }

  std::vector<T> out(static_cast<std::size_t>(numel));
  if (width == sizeof(T)) {
    std::memcpy(out.data(), payload.data(), payload.size());
  } else if (width == 4) {
    const float* src = reinterpret_cast<const float*>(payload.data());
    for (std::int64_t i = 0; i < numel; ++i) out[static_cast<std::size_t>(i)] = static_cast<T>(src[i]);
  } else {
    const double* src = reinterpret_cast<const double*>(payload.data());
    for (std::int64_t i = 0; i < numel; ++i) out[static_cast<std::size_t>(i)] = static_cast<T>(src[i]);
  }
  return Tensor<T>::from(std::move(shape), std::move(out));
}

}  // namespace pft
