#pragma once

#include "ocdn/core.hpp"

#include <map>
#include <mutex>

namespace ocdn::testing {

/// RSA key pairs are slow to generate; tests share a seeded pool.
inline const core::KeyPair& test_keypair(int index)
{
  static std::mutex mutex;
  static std::map<int, core::KeyPair> pool;
  std::lock_guard lock(mutex);
  auto it = pool.find(index);
  if (it == pool.end()) {
    SeededRandom rng(0x5eed0000 + static_cast<std::uint64_t>(index), "test-keypair");
    it = pool.emplace(index, core::KeyPair::generate(rng)).first;
  }
  return it->second;
}

inline core::SharedKey test_shared_key(std::uint64_t seed, std::int64_t now_s = 1'700'000'000,
                                       std::int64_t lifetime_s = 3600)
{
  SeededRandom rng(seed, "test-shared-key");
  return core::SharedKey::generate(rng, now_s, lifetime_s);
}

inline Bytes random_bytes(RandomSource& rng, std::size_t n)
{
  return rng.bytes(n);
}

} // namespace ocdn::testing
