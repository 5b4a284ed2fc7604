#include "pft/checksum.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>

#include "pft/errors.hpp"

namespace pft {

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
  static const char* hexdig = "0123456789abcdef";
  std::string out(static_cast<std::size_t>(len) * 2, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hexdig[digest[i] >> 4];
    out[2 * i + 1] = hexdig[digest[i] & 0xF];
  }
  return out;
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr)) {
    throw runtime_error("sha256 digest failed");
  }
  return to_hex(digest, len);
}

std::string sha256_hex_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open for hashing: " + path.string());
  Sha256Stream stream;
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = is.gcount();
    if (got > 0) stream.update(buf.data(), static_cast<std::size_t>(got));
  }
  return stream.finish_hex();
}

Sha256Stream::Sha256Stream() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || !EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr)) {
    throw runtime_error("sha256 init failed");
  }
  ctx_ = ctx;
}

Sha256Stream::~Sha256Stream() {
  if (ctx_) EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256Stream::update(const void* data, std::size_t size) {
  if (!EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size)) {
    throw runtime_error("sha256 update failed");
  }
}

std::string Sha256Stream::finish_hex() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len)) {
    throw runtime_error("sha256 final failed");
  }
  return to_hex(digest, len);
}

}  // namespace pft
