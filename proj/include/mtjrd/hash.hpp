#ifndef MTJRD_HASH_HPP
#define MTJRD_HASH_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "mtjrd/core.hpp"
#include "mtjrd/image_io.hpp"

namespace mtjrd {

/// Lowercase hex SHA-256.
inline std::string sha256_hex(const void* data, std::size_t size) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data, size) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw IoError("sha256: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string sha256_hex(std::string_view s) { return sha256_hex(s.data(), s.size()); }
inline std::string sha256_hex(const std::vector<std::uint8_t>& v) { return sha256_hex(v.data(), v.size()); }
inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(io::read_file(p)); }

}  // namespace mtjrd

#endif  // MTJRD_HASH_HPP
