#pragma once

#include "ocdn/common.hpp"

namespace ocdn {

/// Source of randomness injected into every operation that needs it.
class RandomSource
{
public:
  virtual ~RandomSource() = default;

  virtual void fill(std::span<std::uint8_t> out) = 0;

  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  /// Uniform integer in [0, bound). bound must be nonzero.
  std::uint64_t uniform(std::uint64_t bound);
  /// Uniform double in [0, 1).
  double uniform_real();
};

/// Operating-system CSPRNG (OpenSSL RAND_bytes).
class OsRandom final : public RandomSource
{
public:
  void fill(std::span<std::uint8_t> out) override;
};

/// Deterministic generator: SHA-256 in counter mode over a 64-bit seed and a label.
/// Used for reproducible simulations and tests. Not thread-safe.
class SeededRandom final : public RandomSource
{
public:
  explicit SeededRandom(std::uint64_t seed, std::string_view label = {});

  void fill(std::span<std::uint8_t> out) override;

  /// Independent child stream; same (seed, label, child label) gives the same stream.
  SeededRandom fork(std::string_view child_label) const;

private:
  void refill();

  std::uint64_t m_seed;
  std::string m_label;
  std::uint64_t m_counter = 0;
  std::array<std::uint8_t, 32> m_block{};
  std::size_t m_used = 32;
};

} // namespace ocdn
