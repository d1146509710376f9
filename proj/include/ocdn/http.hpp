#pragma once

// Socket bindings for the roles: cache node and relay over HTTP/1.1, key queries over
// line-oriented TCP.

#include "ocdn/cachenode.hpp"
#include "ocdn/clientproxy.hpp"
#include "ocdn/keydist.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <thread>

namespace httplib {
class Server;
}

namespace ocdn::http {

/// "host:port" split; throws MalformedError.
std::pair<std::string, int> split_host_port(std::string_view address);

bool is_loopback(std::string_view remote_addr);

/// An httplib server running on a background thread.
class HttpListener
{
public:
  HttpListener();
  virtual ~HttpListener();

  /// Binds; port 0 picks a free port. Returns the bound port. Throws TransportError.
  int bind(const std::string& host, int port);
  void start();
  /// Blocks until stop() is called from another thread.
  void serve();
  void stop();
  int port() const { return m_port; }

  HttpListener(const HttpListener&) = delete;
  HttpListener& operator=(const HttpListener&) = delete;

protected:
  httplib::Server& server() { return *m_server; }

private:
  std::unique_ptr<httplib::Server> m_server;
  std::thread m_thread;
  int m_port = 0;
};

/// GET/PUT /cache/<id-hex>, GET/PUT /plain/<hex path>, GET /admin/log (loopback only).
class CacheHttpServer final : public HttpListener
{
public:
  explicit CacheHttpServer(cache::CacheNode& node);

private:
  cache::CacheNode& m_node;
};

class HttpCacheEndpoint final : public net::CacheEndpoint
{
public:
  HttpCacheEndpoint(std::string address,
                    std::chrono::milliseconds timeout = std::chrono::seconds(10));

  std::string name() const override { return m_address; }
  net::PutStatus put(const core::ObfuscatedId& id, const core::ContentEnvelope& env,
                     const core::PublicKey& origin, ByteView signature) override;
  std::optional<core::ContentEnvelope> get(const core::ObfuscatedId& id) override;
  void put_plain(const std::string& path, ByteView body) override;
  std::optional<Bytes> get_plain(const std::string& path) override;

  /// GET /admin/log, parsed.
  std::vector<cache::AccessLogRecord> fetch_log();

private:
  std::string m_address;
  std::chrono::milliseconds m_timeout;
};

/// POST /ocdn/relay and /ocdn/deliver into a handler. With a peer table it also
/// answers GET /ocdn/peers and accepts POST /ocdn/announce.
class RelayHttpServer final : public HttpListener
{
public:
  explicit RelayHttpServer(net::RelayHandler& handler, client::PeerTable* peers = nullptr);

  /// Peers usually need the bound address, so the table can be attached after bind().
  void set_peers(client::PeerTable* peers) { m_peers = peers; }

private:
  net::RelayHandler& m_handler;
  std::atomic<client::PeerTable*> m_peers;
};

/// Sends relay and deliver messages as HTTP POSTs to "host:port" destinations.
class HttpRelayNetwork final : public net::RelayNetwork
{
public:
  explicit HttpRelayNetwork(std::chrono::milliseconds timeout = std::chrono::seconds(30))
    : m_timeout(timeout)
  {
  }

  bool send_relay(const std::string& from, const std::string& to,
                  const net::RelayMessage& msg) override;
  bool send_deliver(const std::string& from, const std::string& to,
                    const net::DeliverMessage& msg) override;

  /// Membership exchange with a peer. Throws TransportError.
  std::vector<client::Announcement> fetch_peers(const std::string& address);
  void announce(const std::string& address, const std::vector<client::Announcement>& entries);

private:
  std::chrono::milliseconds m_timeout;
};

/// Key authority on TCP: one JSON query per line, one JSON answer per line.
class KeyLineServer
{
public:
  explicit KeyLineServer(keydist::KeyAuthority& authority);
  ~KeyLineServer();

  int bind(const std::string& host, int port);
  void start();
  void serve();
  void stop();
  int port() const { return m_port; }

private:
  void handle(int fd);

  keydist::KeyAuthority& m_authority;
  int m_listen_fd = -1;
  int m_port = 0;
  std::atomic<bool> m_running{false};
  std::thread m_thread;
  std::mutex m_mutex;
  std::condition_variable m_idle;
  std::vector<int> m_clients; // open connections, each served by a detached thread
};

class TcpKeyChannel final : public net::KeyQueryChannel
{
public:
  TcpKeyChannel(std::string address, std::chrono::milliseconds timeout = std::chrono::seconds(5));
  std::string exchange(const std::string& query_line) override;

private:
  std::string m_address;
  std::chrono::milliseconds m_timeout;
};

} // namespace ocdn::http
