#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ocdn {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Authenticated decryption failed (wrong key or modified ciphertext).
class TamperError : public Error
{
public:
  using Error::Error;
};

/// Input bytes do not follow the expected wire layout.
class MalformedError : public Error
{
public:
  using Error::Error;
};

/// A caller-supplied argument is outside its documented range.
class RangeError : public Error
{
public:
  using Error::Error;
};

/// A remote peer could not be reached or did not answer in time. Retryable.
class TransportError : public Error
{
public:
  using Error::Error;
};

std::string to_hex(ByteView bytes);
Bytes from_hex(std::string_view hex);

std::string to_base64(ByteView bytes);
Bytes from_base64(std::string_view text);

inline ByteView as_bytes(std::string_view s)
{
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string to_string(ByteView b)
{
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

void append(Bytes& out, ByteView more);
void put_u32_be(Bytes& out, std::uint32_t v);
void put_u64_be(Bytes& out, std::uint64_t v);
std::uint32_t get_u32_be(ByteView in);
std::uint64_t get_u64_be(ByteView in);

/// Constant-time equality for secrets and MACs.
bool equal_ct(ByteView a, ByteView b);

/// True if `needle` occurs anywhere in `haystack`.
bool contains(ByteView haystack, ByteView needle);

} // namespace ocdn
