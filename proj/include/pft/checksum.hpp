#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pft {

// SHA-256 as lowercase hex.
std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex_file(const std::filesystem::path& path);

// Incremental variant for hashing several buffers as one stream.
class Sha256Stream {
 public:
  Sha256Stream();
  ~Sha256Stream();
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  void update(const void* data, std::size_t size);
  std::string finish_hex();

 private:
  void* ctx_;
};

}  // namespace pft
