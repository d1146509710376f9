#include "ocdn/common.hpp"

#include <algorithm>

#include <openssl/crypto.h>
#include <openssl/evp.h>

namespace ocdn {

std::string to_hex(ByteView bytes)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

namespace {

int hex_value(char c)
{
  if (c >= '0' && c <= '9')
    return c - '0';
  if (c >= 'a' && c <= 'f')
    return c - 'a' + 10;
  if (c >= 'A' && c <= 'F')
    return c - 'A' + 10;
  return -1;
}

} // namespace

Bytes from_hex(std::string_view hex)
{
  if (hex.size() % 2 != 0)
    throw MalformedError("hex string has odd length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_value(hex[i]);
    int lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0)
      throw MalformedError("invalid hex digit");
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

std::string to_base64(ByteView bytes)
{
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes from_base64(std::string_view text)
{
  if (text.size() % 4 != 0)
    throw MalformedError("base64 length not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0)
    throw MalformedError("invalid base64");
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=')
    ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=')
    ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

void append(Bytes& out, ByteView more)
{
  out.insert(out.end(), more.begin(), more.end());
}

void put_u32_be(Bytes& out, std::uint32_t v)
{
  for (int shift = 24; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64_be(Bytes& out, std::uint64_t v)
{
  for (int shift = 56; shift >= 0; shift -= 8)
    out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint32_t get_u32_be(ByteView in)
{
  if (in.size() < 4)
    throw MalformedError("truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v = v << 8 | in[i];
  return v;
}

std::uint64_t get_u64_be(ByteView in)
{
  if (in.size() < 8)
    throw MalformedError("truncated u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v = v << 8 | in[i];
  return v;
}

bool equal_ct(ByteView a, ByteView b)
{
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

bool contains(ByteView haystack, ByteView needle)
{
  if (needle.empty())
    return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

} // namespace ocdn
