#pragma once

#include "ocdn/clock.hpp"
#include "ocdn/core.hpp"
#include "ocdn/transport.hpp"

#include <list>
#include <mutex>
#include <optional>

namespace ocdn::cache {

struct AccessLogRecord
{
  std::int64_t time_ms = 0;
  std::string peer;
  std::string verb; // "GET" or "PUT"
  std::string id;   // id hex, or "plain:<path>" for plaintext objects

  /// One JSON object, no trailing newline.
  std::string to_json() const;
  static AccessLogRecord from_json(std::string_view line);

  friend bool operator==(const AccessLogRecord&, const AccessLogRecord&) = default;
};

struct CacheEntry
{
  core::ObfuscatedId id;
  Bytes envelope; // serialized, byte-exact as received
  core::Digest origin_fingerprint{};
  std::int64_t stored_at = 0;
};

struct CacheNodeConfig
{
  std::uint64_t capacity_bytes = 1ull << 30;
  /// When set, first writes from origins outside `trusted_origins` are refused.
  bool strict_allowlist = false;
  std::vector<core::PublicKey> trusted_origins;
};

/// Oblivious object store. It only ever handles ids, envelopes, and public keys.
class CacheNode
{
public:
  explicit CacheNode(const Clock& clock, CacheNodeConfig config = {});

  net::PutStatus put_object(const core::ObfuscatedId& id, const core::ContentEnvelope& env,
                            const core::PublicKey& origin, ByteView signature,
                            const std::string& peer);
  std::optional<Bytes> get_object(const core::ObfuscatedId& id, const std::string& peer);

  void put_plain(const std::string& path, ByteView body, const std::string& peer);
  std::optional<Bytes> get_plain(const std::string& path, const std::string& peer);

  /// Logs a request that could not be decoded far enough to reach the store.
  void log_rejected(const std::string& peer, const std::string& verb, const std::string& id_text);

  std::vector<AccessLogRecord> dump_log() const;
  std::size_t log_size() const;
  /// Snapshot of stored encrypted entries, in LRU order (most recent first).
  std::vector<CacheEntry> entries() const;
  /// Every stored byte: encrypted entries, fingerprints, and plaintext objects.
  Bytes stored_bytes() const;

  std::size_t size() const;
  std::uint64_t stored_size() const;
  std::uint64_t gets() const;

private:
  using LruList = std::list<core::ObfuscatedId>;
  struct Slot
  {
    CacheEntry entry;
    LruList::iterator lru;
  };

  void log(const std::string& peer, std::string verb, std::string id);
  void touch(Slot& slot);
  void evict_locked();
  bool trusted(const core::Digest& fingerprint) const;

  const Clock& m_clock;
  CacheNodeConfig m_config;
  std::vector<core::Digest> m_trusted;

  mutable std::mutex m_mutex;
  std::map<core::ObfuscatedId, Slot> m_store;
  LruList m_lru;
  std::uint64_t m_stored_bytes = 0;
  std::map<std::string, Bytes> m_plain;
  std::vector<AccessLogRecord> m_log;
  std::uint64_t m_gets = 0;
};

/// In-process binding of a CacheNode, tagging requests with the caller's address.
class LocalCacheEndpoint final : public net::CacheEndpoint
{
public:
  LocalCacheEndpoint(CacheNode& node, std::string node_name, std::string peer)
    : m_node(node)
    , m_name(std::move(node_name))
    , m_peer(std::move(peer))
  {
  }

  std::string name() const override { return m_name; }
  net::PutStatus put(const core::ObfuscatedId& id, const core::ContentEnvelope& env,
                     const core::PublicKey& origin, ByteView signature) override;
  std::optional<core::ContentEnvelope> get(const core::ObfuscatedId& id) override;
  void put_plain(const std::string& path, ByteView body) override;
  std::optional<Bytes> get_plain(const std::string& path) override;

private:
  CacheNode& m_node;
  std::string m_name;
  std::string m_peer;
};

} // namespace ocdn::cache
