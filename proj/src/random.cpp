#include "ocdn/random.hpp"

#include <openssl/rand.h>
#include <openssl/sha.h>

namespace ocdn {

Bytes RandomSource::bytes(std::size_t n)
{
  Bytes out(n);
  fill(out);
  return out;
}

std::uint64_t RandomSource::next_u64()
{
  std::array<std::uint8_t, 8> buf{};
  fill(buf);
  return get_u64_be(buf);
}

std::uint64_t RandomSource::uniform(std::uint64_t bound)
{
  if (bound == 0)
    throw RangeError("uniform bound must be positive");
  // reject the biased tail
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double RandomSource::uniform_real()
{
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

void OsRandom::fill(std::span<std::uint8_t> out)
{
  if (out.empty())
    return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
    throw Error("RAND_bytes failed");
}

SeededRandom::SeededRandom(std::uint64_t seed, std::string_view label)
  : m_seed(seed)
  , m_label(label)
{
}

SeededRandom SeededRandom::fork(std::string_view child_label) const
{
  std::string label = m_label;
  label.push_back('/');
  label.append(child_label);
  return SeededRandom(m_seed, label);
}

void SeededRandom::refill()
{
  Bytes msg;
  put_u64_be(msg, m_seed);
  put_u64_be(msg, m_counter++);
  append(msg, as_bytes(m_label));
  SHA256(msg.data(), msg.size(), m_block.data());
  m_used = 0;
}

void SeededRandom::fill(std::span<std::uint8_t> out)
{
  for (auto& b : out) {
    if (m_used == m_block.size())
      refill();
    b = m_block[m_used++];
  }
}

} // namespace ocdn
