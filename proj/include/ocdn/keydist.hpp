#pragma once

#include "ocdn/clock.hpp"
#include "ocdn/core.hpp"
#include "ocdn/ring.hpp"
#include "ocdn/transport.hpp"

#include <functional>
#include <memory>
#include <mutex>
#include <variant>

namespace ocdn::keydist {

inline constexpr std::int64_t kDefaultCacheTtlSeconds = 300;

enum class RefusalCode
{
  BadId,
  NotOwner,
  Unknown,
  Malformed,
};

std::string_view to_string(RefusalCode code);
RefusalCode refusal_from_string(std::string_view text);

/// The origin refused to hand out a key.
class KeyRefused : public Error
{
public:
  explicit KeyRefused(RefusalCode code)
    : Error("key query refused: " + std::string(to_string(code)))
    , m_code(code)
  {
  }

  RefusalCode code() const { return m_code; }

private:
  RefusalCode m_code;
};

/// Exit proxy's key request. Mirrors QNAME plus the Additional section.
struct KeyQuery
{
  core::CanonicalUrl url;
  ring::SelfCertifyingId proxy_id;
  core::PublicKey proxy_pub;

  std::string to_line() const;
  static KeyQuery from_line(std::string_view line);
};

/// SRV-style answer: the shared key sealed to the requesting proxy.
struct KeyRecord
{
  std::string url_pattern;
  Bytes sealed_key;
  core::KeyId key_id{};
  std::int64_t expires_at = 0;
  /// Number of encodings the origin published for the queried URL.
  std::uint32_t encodings = 1;
};

using KeyAnswer = std::variant<KeyRecord, RefusalCode>;

std::string answer_to_line(const KeyAnswer& answer);
KeyAnswer answer_from_line(std::string_view line);

/// What an origin exposes to its key authority.
struct KeyGrant
{
  std::string url_pattern;
  core::SharedKey key;
  std::uint32_t encodings;
};

class KeySource
{
public:
  virtual ~KeySource() = default;
  /// Current key for a published URL, or nullopt if the URL is unknown.
  virtual std::optional<KeyGrant> lookup(const core::CanonicalUrl& url) = 0;
};

/// Origin-side authoritative key service.
class KeyAuthority
{
public:
  KeyAuthority(KeySource& source, ring::Ring ring);

  void set_ring(ring::Ring ring);
  std::shared_ptr<const ring::Ring> ring() const;

  KeyAnswer answer_key_query(const KeyQuery& q);
  /// Wire entry point: one JSON query line in, one JSON answer line out.
  std::string handle_line(std::string_view line);

  std::uint64_t queries() const { return m_queries; }

private:
  KeySource& m_source;
  mutable std::mutex m_mutex;
  std::shared_ptr<const ring::Ring> m_ring;
  std::atomic<std::uint64_t> m_queries{0};
};

/// In-process channel straight into a KeyAuthority; counts round trips and keeps the wire.
class LocalKeyChannel final : public net::KeyQueryChannel
{
public:
  explicit LocalKeyChannel(KeyAuthority& authority) : m_authority(authority) {}

  std::string exchange(const std::string& query_line) override;

  std::uint64_t round_trips() const { return m_round_trips; }
  /// Every query and answer line seen so far.
  std::vector<std::string> wire() const;
  void set_failing(bool failing) { m_failing = failing; }

private:
  KeyAuthority& m_authority;
  std::atomic<std::uint64_t> m_round_trips{0};
  std::atomic<bool> m_failing{false};
  mutable std::mutex m_mutex;
  std::vector<std::string> m_wire;
};

/// Static "which key service answers for which URL prefix" table.
class OriginDirectory
{
public:
  void add(std::string url_prefix, std::shared_ptr<net::KeyQueryChannel> channel);
  /// Longest matching prefix, or nullptr.
  net::KeyQueryChannel* channel_for(const core::CanonicalUrl& url) const;

private:
  std::vector<std::pair<std::string, std::shared_ptr<net::KeyQueryChannel>>> m_entries;
};

struct FetchedKey
{
  core::SharedKey key;
  std::uint32_t encodings;
  std::string url_pattern;
  std::int64_t cache_until; // unix seconds, <= key.expires_at()
};

/// Exit-proxy side: per-URL key cache with coalesced refresh.
class KeyFetcher
{
public:
  KeyFetcher(const core::KeyPair& proxy, ring::SelfCertifyingId self,
             const OriginDirectory& directory, const Clock& clock,
             std::int64_t cache_ttl_s = kDefaultCacheTtlSeconds);

  /// Cached key if still valid, else one round trip. Throws KeyRefused or TransportError.
  FetchedKey fetch_key(const core::CanonicalUrl& url);

  void invalidate(const core::CanonicalUrl& url);
  std::uint64_t round_trips() const { return m_round_trips; }

private:
  struct Slot
  {
    std::mutex mutex;
    std::optional<FetchedKey> cached;
  };

  std::shared_ptr<Slot> slot_for(const core::CanonicalUrl& url);

  const core::KeyPair& m_proxy;
  ring::SelfCertifyingId m_self;
  const OriginDirectory& m_directory;
  const Clock& m_clock;
  std::int64_t m_cache_ttl_s;

  std::mutex m_mutex;
  std::map<std::string, std::shared_ptr<Slot>> m_slots;
  std::atomic<std::uint64_t> m_round_trips{0};
};

} // namespace ocdn::keydist
