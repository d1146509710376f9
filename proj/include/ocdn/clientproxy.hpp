#pragma once

#include "ocdn/exitproxy.hpp"

#include <condition_variable>

namespace ocdn::client {

struct Mode
{
  enum class Kind
  {
    Direct,
    Routed,
    SpoofedDirect,
  };

  Kind kind = Kind::Direct;
  unsigned peers = 0;

  static Mode direct() { return {Kind::Direct, 0}; }
  static Mode routed(unsigned len) { return {Kind::Routed, len}; }
  static Mode spoofed_direct(unsigned prefix) { return {Kind::SpoofedDirect, prefix}; }

  /// "direct", "routed:<n>", "spoofed_direct:<n>"
  static Mode parse(std::string_view text);
  std::string to_string() const;

  friend bool operator==(const Mode&, const Mode&) = default;
};

class InsufficientPeers : public Error
{
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Membership

/// Signed join/leave notice for one peer address.
struct Announcement
{
  std::string address;
  Bytes peer_key; // raw Ed25519 public key
  std::int64_t timestamp_ms = 0;
  bool leave = false;
  Bytes signature;

  static Announcement make(const core::PeerIdentity& identity, std::string address,
                           std::int64_t timestamp_ms, bool leave);
  bool verify() const;

  std::string to_line() const;
  /// Throws MalformedError.
  static Announcement from_line(std::string_view line);

  friend bool operator==(const Announcement&, const Announcement&) = default;

private:
  Bytes signed_bytes() const;
};

/// Peers this node knows about. Newest announcement per address wins; leaves are kept as tombstones
/// until they age out so they keep overriding stale joins during exchanges.
class PeerTable
{
public:
  PeerTable(std::string self, const Clock& clock, std::int64_t inactivity_ms = 120'000);

  /// False if the announcement is malformed, unsigned, older than what we hold, or
  /// signed by a different key than the one first seen for that address.
  bool apply(const Announcement& a);
  /// Anti-entropy: apply every entry of another node's table.
  std::size_t merge(const std::vector<Announcement>& entries);
  std::vector<Announcement> snapshot() const;

  void prune();
  std::vector<std::string> live_peers() const;
  bool contains(const std::string& address) const;

private:
  bool fresh(const Announcement& a, std::int64_t now) const;

  std::string m_self;
  const Clock& m_clock;
  std::int64_t m_inactivity_ms;
  mutable std::mutex m_mutex;
  std::map<std::string, Announcement> m_entries;
};

// ---------------------------------------------------------------------------
// Exit directory

struct ExitInfo
{
  ring::SelfCertifyingId id;
  std::string address;
  core::PublicKey public_key;
};

/// Roster plus the ring built from it.
class ExitDirectory
{
public:
  explicit ExitDirectory(ring::Roster roster, unsigned virtual_points = ring::kDefaultVirtualPoints,
                         unsigned replication = ring::kDefaultReplication);

  /// Replaces the snapshot if the roster is newer. Returns whether it changed.
  bool update(ring::Roster roster);
  /// Owner of the url's first-encoding position.
  ExitInfo lookup(const core::CanonicalUrl& url) const;
  std::uint64_t version() const;
  std::shared_ptr<const ring::Ring> ring() const;

private:
  struct Snapshot
  {
    ring::Roster roster;
    ring::Ring ring;
  };

  unsigned m_virtual_points;
  unsigned m_replication;
  mutable std::mutex m_mutex;
  std::shared_ptr<const Snapshot> m_snapshot;
  std::shared_ptr<const ring::Ring> m_ring;
};

// ---------------------------------------------------------------------------

struct BuiltRequest
{
  net::RelayMessage message;
  std::string first_hop;
  core::SessionKey session_key;
  ExitInfo exit;
};

struct FetchResult
{
  exitproxy::ResponseStatus status;
  Bytes body;
  net::RequestId request{};

  bool ok() const { return status == exitproxy::ResponseStatus::Ok; }
};

struct ClientCounters
{
  std::uint64_t originated = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t accepted = 0;
  std::uint64_t discarded = 0;
  std::uint64_t dropped = 0;
};

/// Peer node: originates, forwards, and accepts its own deliveries.
class ClientProxy final : public net::RelayHandler
{
public:
  ClientProxy(std::string address, ExitDirectory& directory, PeerTable& peers,
              net::RelayNetwork& network, RandomSource& rng);

  const std::string& address() const { return m_address; }

  BuiltRequest build_request(const core::CanonicalUrl& url, Mode mode);
  /// Builds, remembers the session key, and transmits to the first hop.
  net::RequestId send(const core::CanonicalUrl& url, Mode mode);
  /// send() and wait for the delivery. On a NOT_OWNER answer the roster is refreshed once.
  /// Throws TransportError on timeout.
  FetchResult fetch(const core::CanonicalUrl& url, Mode mode,
                    std::chrono::milliseconds timeout = std::chrono::seconds(30));

  void on_relay(const net::RelayMessage& msg, const std::string& from) override;
  void on_deliver(const net::DeliverMessage& msg, const std::string& from) override;

  /// Passes the message unchanged to the hop after this node.
  bool forward(const net::RelayMessage& msg);
  /// Plaintext if the delivery answers one of our requests; consumes it. Everything else is dropped.
  std::optional<FetchResult> accept_delivery(const net::DeliverMessage& msg);

  /// Result of a request whose delivery has already arrived, consumed on read.
  std::optional<FetchResult> take_result(const net::RequestId& request);

  void set_op_recorder(metrics::OpRecorder* recorder) { m_recorder = recorder; }
  void set_roster_refresh(std::function<std::optional<ring::Roster>()> refresh)
  {
    m_refresh = std::move(refresh);
  }

  std::size_t pending_size() const;
  ClientCounters counters() const;

private:
  std::vector<std::string> pick_peers(unsigned n);

  std::string m_address;
  ExitDirectory& m_directory;
  PeerTable& m_peers;
  net::RelayNetwork& m_network;
  RandomSource& m_rng;
  metrics::OpRecorder* m_recorder = nullptr;
  std::function<std::optional<ring::Roster>()> m_refresh;

  mutable std::mutex m_mutex; // guards the tables below and m_rng
  std::condition_variable m_arrived;
  std::map<net::RequestId, core::SessionKey> m_pending;
  std::map<net::RequestId, FetchResult> m_results;
  ClientCounters m_counters;
};

} // namespace ocdn::client
