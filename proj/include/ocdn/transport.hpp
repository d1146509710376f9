#pragma once

#include "ocdn/core.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <optional>

namespace ocdn::net {

// ---------------------------------------------------------------------------
// Cache node access

enum class PutStatus
{
  Stored,
  Unchanged,
  BadSignature,
  OriginMismatch,
  Untrusted,
};

std::string_view to_string(PutStatus s);
inline bool accepted(PutStatus s)
{
  return s == PutStatus::Stored || s == PutStatus::Unchanged;
}

/// One cache node as seen by a publisher or exit proxy.
class CacheEndpoint
{
public:
  virtual ~CacheEndpoint() = default;

  virtual std::string name() const = 0;
  virtual PutStatus put(const core::ObfuscatedId& id, const core::ContentEnvelope& env,
                        const core::PublicKey& origin, ByteView signature) = 0;
  /// nullopt means not-found; transport failures throw TransportError.
  virtual std::optional<core::ContentEnvelope> get(const core::ObfuscatedId& id) = 0;

  // Plaintext objects for partially deployed origins and the no-OCDN baseline.
  virtual void put_plain(const std::string& path, ByteView body) = 0;
  virtual std::optional<Bytes> get_plain(const std::string& path) = 0;
};

// ---------------------------------------------------------------------------
// Key distribution channel: one JSON line out, one JSON line back.

class KeyQueryChannel
{
public:
  virtual ~KeyQueryChannel() = default;
  /// Throws TransportError on timeout or connection failure.
  virtual std::string exchange(const std::string& query_line) = 0;
};

// ---------------------------------------------------------------------------
// Relay messages between peers and exit proxies

using RequestId = std::array<std::uint8_t, 16>;

struct RelayMessage
{
  RequestId request_id{};
  Bytes sealed_session_key;
  std::vector<std::string> route;
  Bytes encrypted_url;

  /// Route joined with ','.
  std::string route_header() const;
  static std::vector<std::string> parse_route(std::string_view header);

  /// Canonical byte form: the HTTP header values and body in a fixed layout.
  Bytes serialize() const;
  static RelayMessage parse(ByteView wire);

  friend bool operator==(const RelayMessage&, const RelayMessage&) = default;
};

struct DeliverMessage
{
  RequestId request_id{};
  Bytes body;

  Bytes serialize() const;
  static DeliverMessage parse(ByteView wire);

  friend bool operator==(const DeliverMessage&, const DeliverMessage&) = default;
};

/// Receiving side of a peer or exit proxy. `from` is the transport-level sender.
class RelayHandler
{
public:
  virtual ~RelayHandler() = default;
  virtual void on_relay(const RelayMessage& msg, const std::string& from) = 0;
  virtual void on_deliver(const DeliverMessage& msg, const std::string& from) = 0;
};

class RelayNetwork
{
public:
  virtual ~RelayNetwork() = default;
  /// Best effort; unreachable destinations are reported by returning false.
  virtual bool send_relay(const std::string& from, const std::string& to,
                          const RelayMessage& msg) = 0;
  virtual bool send_deliver(const std::string& from, const std::string& to,
                            const DeliverMessage& msg) = 0;
};

/// Synchronous in-process network: sends dispatch straight into the registered handler.
class LocalNetwork final : public RelayNetwork
{
public:
  enum class Kind
  {
    Relay,
    Deliver,
  };

  struct Transmission
  {
    Kind kind;
    std::string from;
    std::string to;
    Bytes wire;
  };

  using Observer = std::function<void(const Transmission&)>;

  void attach(const std::string& address, RelayHandler* handler);
  void detach(const std::string& address);

  bool send_relay(const std::string& from, const std::string& to, const RelayMessage& msg) override;
  bool send_deliver(const std::string& from, const std::string& to,
                    const DeliverMessage& msg) override;

  /// Called before dispatch for every transmission, including ones to unknown addresses.
  void set_observer(Observer observer) { m_observer = std::move(observer); }
  /// Called after a delivery has been handled by its recipient.
  void set_after_deliver(Observer observer) { m_after_deliver = std::move(observer); }

  void record_wire(bool on) { m_record = on; }
  std::vector<Transmission> take_wire_log();
  std::size_t transmissions() const { return m_count; }

private:
  RelayHandler* lookup(const std::string& address);
  void note(Transmission t);

  std::mutex m_mutex;
  std::map<std::string, RelayHandler*> m_handlers;
  Observer m_observer;
  Observer m_after_deliver;
  bool m_record = false;
  std::vector<Transmission> m_log;
  std::size_t m_count = 0;
};

} // namespace ocdn::net
