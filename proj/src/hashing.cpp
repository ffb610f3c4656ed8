#include "domex/hashing.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>

#include "domex/error.hpp"

namespace domex {

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1) {
    fail(ErrorKind::resource, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string content_hash(std::initializer_list<std::string_view> fields) {
  std::string buffer;
  for (std::string_view field : fields) {
    buffer += std::to_string(field.size());
    buffer += ':';
    buffer += field;
  }
  return sha256_hex(buffer);
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  std::string compact;
  compact.reserve(text.size());
  for (char c : text) {
    if (c != '\n' && c != '\r' && c != ' ') compact.push_back(c);
  }
  require(compact.size() % 4 == 0, ErrorKind::parse, "base64 payload has invalid length");
  std::vector<unsigned char> out(compact.size() / 4 * 3);
  const int written = EVP_DecodeBlock(
      out.data(), reinterpret_cast<const unsigned char*>(compact.data()),
      static_cast<int>(compact.size()));
  require(written >= 0, ErrorKind::parse, "invalid base64 payload");
  std::size_t padding = 0;
  if (!compact.empty() && compact.back() == '=') ++padding;
  if (compact.size() > 1 && compact[compact.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(written) - padding);
  return out;
}

}  // namespace domex
