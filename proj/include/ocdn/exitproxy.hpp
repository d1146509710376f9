#pragma once

#include "ocdn/keydist.hpp"
#include "ocdn/metrics.hpp"

#include <deque>

namespace ocdn::exitproxy {

enum class ResponseStatus : std::uint8_t
{
  Ok = 0,
  NotFound = 1,
  UpstreamError = 2,
  IntegrityError = 3,
  BadRequest = 4,
};

std::string_view to_string(ResponseStatus s);

/// Delivery body: AEAD under the session key of (status byte | payload), bound to the request id.
Bytes seal_response(const core::SessionKey& key, const net::RequestId& request,
                    ResponseStatus status, ByteView payload, RandomSource& rng);

struct Response
{
  ResponseStatus status;
  Bytes payload;
};

/// nullopt when the body was not sealed under `key` for this request.
std::optional<Response> open_response(const core::SessionKey& key, const net::DeliverMessage& msg);

/// Size of a sealed response carrying `payload_len` bytes.
std::size_t sealed_response_size(std::size_t payload_len);

// ---------------------------------------------------------------------------

struct FlashcrowdConfig
{
  bool enabled = true;
  double threshold_rps = 50.0;
  std::int64_t window_ms = 10'000;
  std::int64_t ttl_ms = 30'000;
};

/// Per-id sliding-window rate estimate plus a short-lived envelope cache for hot ids.
class FlashcrowdCache
{
public:
  FlashcrowdCache(const Clock& clock, FlashcrowdConfig config = {});

  /// Counts one request for `id` and reports whether its rate is above the threshold.
  bool admit(const core::ObfuscatedId& id);
  double rate(const core::ObfuscatedId& id);

  /// Cached envelope if present and younger than the TTL.
  std::optional<core::ContentEnvelope> lookup(const core::ObfuscatedId& id);
  void insert(const core::ObfuscatedId& id, core::ContentEnvelope env);

  std::size_t size() const;

private:
  struct Window
  {
    std::deque<std::int64_t> hits;
  };
  struct Entry
  {
    core::ContentEnvelope env;
    std::int64_t inserted_at;
  };

  void trim(Window& w, std::int64_t now) const;

  const Clock& m_clock;
  FlashcrowdConfig m_config;
  mutable std::mutex m_mutex;
  std::map<core::ObfuscatedId, Window> m_windows;
  std::map<core::ObfuscatedId, Entry> m_entries;
  std::uint64_t m_admissions = 0;
};

// ---------------------------------------------------------------------------

struct ExitConfig
{
  std::string address;
  FlashcrowdConfig flashcrowd;
  std::uint32_t max_encodings = core::kDefaultMaxEncodings;
  /// Keep what this exit saw of each route; models an adversary operating the exit.
  bool record_observations = false;
};

/// What an exit operator can see of one request.
struct Observation
{
  net::RequestId request{};
  std::vector<std::string> route;
  std::string previous_hop;
};

struct PendingRequest
{
  core::SessionKey session_key;
  std::vector<std::string> route;
  std::int64_t received_at = 0;
};

struct ExitCounters
{
  std::uint64_t requests = 0;
  std::uint64_t cache_gets = 0;
  std::uint64_t flashcrowd_hits = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t dropped = 0;
};

class ExitProxy final : public net::RelayHandler
{
public:
  ExitProxy(ExitConfig config, const core::KeyPair& keys, keydist::KeyFetcher& fetcher,
            std::vector<std::shared_ptr<net::CacheEndpoint>> caches, net::RelayNetwork& network,
            const Clock& clock, RandomSource& rng);

  const std::string& address() const { return m_config.address; }
  ring::SelfCertifyingId id() const;

  void on_relay(const net::RelayMessage& msg, const std::string& from) override;
  /// Exits do not originate requests; deliveries addressed to them are dropped.
  void on_deliver(const net::DeliverMessage& msg, const std::string& from) override;

  /// Serves one request and fans the response out to every client on its route.
  void handle_request(const net::RelayMessage& msg, const std::string& from);

  void set_op_recorder(metrics::OpRecorder* recorder) { m_recorder = recorder; }

  std::size_t pending_size() const;
  /// Every session key and route byte currently retained.
  Bytes pending_state_bytes() const;
  std::vector<Observation> observations() const;
  ExitCounters counters() const;
  FlashcrowdCache& flashcrowd() { return m_flash; }

private:
  Response serve(const net::RequestId& request, const core::SessionKey& skey,
                 ByteView encrypted_url);
  std::optional<core::ContentEnvelope> get_envelope(const core::ObfuscatedId& id, bool& upstream_failed);
  void fan_out(const net::RequestId& request, const std::vector<std::string>& route, const Bytes& body);
  std::uint64_t pick(std::uint64_t bound);

  ExitConfig m_config;
  const core::KeyPair& m_keys;
  keydist::KeyFetcher& m_fetcher;
  std::vector<std::shared_ptr<net::CacheEndpoint>> m_caches;
  net::RelayNetwork& m_network;
  const Clock& m_clock;
  RandomSource& m_rng;
  FlashcrowdCache m_flash;
  metrics::OpRecorder* m_recorder = nullptr;

  mutable std::mutex m_mutex; // guards everything below and m_rng
  std::map<net::RequestId, PendingRequest> m_pending;
  std::vector<Observation> m_observations;
  ExitCounters m_counters;
  std::size_t m_next_cache = 0;
};

} // namespace ocdn::exitproxy
