#include "ocdn/http.hpp"

#include "httplib.h"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <charconv>
#include <sstream>

namespace ocdn::http {

namespace {

constexpr const char* kOctets = "application/octet-stream";

std::string body_string(ByteView b) { return std::string(b.begin(), b.end()); }
Bytes body_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }

net::PutStatus put_status_from(std::string_view s)
{
  for (auto st : {net::PutStatus::Stored, net::PutStatus::Unchanged, net::PutStatus::BadSignature,
                  net::PutStatus::OriginMismatch, net::PutStatus::Untrusted})
    if (net::to_string(st) == s)
      return st;
  throw MalformedError("unknown put status: " + std::string(s));
}

int put_http_status(net::PutStatus s)
{
  switch (s) {
  case net::PutStatus::Stored:
    return 201;
  case net::PutStatus::Unchanged:
    return 200;
  case net::PutStatus::OriginMismatch:
    return 409;
  case net::PutStatus::BadSignature:
  case net::PutStatus::Untrusted:
    return 403;
  }
  return 500;
}

std::unique_ptr<httplib::Client> client_for(const std::string& address,
                                            std::chrono::milliseconds timeout)
{
  auto [host, port] = split_host_port(address);
  auto cli = std::make_unique<httplib::Client>(host, port);
  cli->set_connection_timeout(timeout);
  cli->set_read_timeout(timeout);
  cli->set_write_timeout(timeout);
  cli->set_keep_alive(false);
  return cli;
}

[[noreturn]] void transport_failure(const std::string& address, const httplib::Result& r)
{
  throw TransportError(address + ": " + httplib::to_string(r.error()));
}

net::RequestId request_id_from(const std::string& hex)
{
  auto raw = from_hex(hex);
  if (raw.size() != 16)
    throw MalformedError("request id must be 16 bytes");
  net::RequestId id;
  std::copy(raw.begin(), raw.end(), id.begin());
  return id;
}

std::string sender(const httplib::Request& req)
{
  return req.remote_addr + ":" + std::to_string(req.remote_port);
}

} // namespace

std::pair<std::string, int> split_host_port(std::string_view address)
{
  auto colon = address.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == address.size())
    throw MalformedError("expected host:port, got '" + std::string(address) + "'");
  int port = 0;
  auto digits = address.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port < 0 || port > 65535)
    throw MalformedError("bad port in '" + std::string(address) + "'");
  std::string host(address.substr(0, colon));
  if (host.size() > 2 && host.front() == '[' && host.back() == ']')
    host = host.substr(1, host.size() - 2);
  return {host, port};
}

bool is_loopback(std::string_view remote_addr)
{
  return remote_addr == "::1" || remote_addr.starts_with("127.") ||
         remote_addr.starts_with("::ffff:127.");
}

// ---------------------------------------------------------------------------

HttpListener::HttpListener() : m_server(std::make_unique<httplib::Server>()) {}

HttpListener::~HttpListener() { stop(); }

int HttpListener::bind(const std::string& host, int port)
{
  if (port == 0)
    m_port = m_server->bind_to_any_port(host);
  else
    m_port = m_server->bind_to_port(host, port) ? port : -1;
  if (m_port <= 0)
    throw TransportError("cannot bind " + host + ":" + std::to_string(port));
  return m_port;
}

void HttpListener::start()
{
  m_thread = std::thread([this] { m_server->listen_after_bind(); });
  m_server->wait_until_ready();
}

void HttpListener::serve() { m_server->listen_after_bind(); }

void HttpListener::stop()
{
  m_server->stop();
  if (m_thread.joinable())
    m_thread.join();
}

// ---------------------------------------------------------------------------

CacheHttpServer::CacheHttpServer(cache::CacheNode& node) : m_node(node)
{
  auto& s = server();

  s.Get(R"(/cache/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string text = req.matches[1];
    core::ObfuscatedId id;
    try {
      id = core::ObfuscatedId::from_hex(text);
    }
    catch (const Error&) {
      m_node.log_rejected(req.remote_addr, "GET", text);
      res.status = 400;
      return;
    }
    auto body = m_node.get_object(id, req.remote_addr);
    if (!body) {
      res.status = 404;
      return;
    }
    res.set_content(body_string(*body), kOctets);
  });

  s.Put(R"(/cache/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string text = req.matches[1];
    net::PutStatus status;
    try {
      auto id = core::ObfuscatedId::from_hex(text);
      auto origin = core::PublicKey::from_der(from_base64(req.get_header_value("X-OCDN-Origin")));
      auto sig = from_base64(req.get_header_value("X-OCDN-Sig"));
      auto env = core::ContentEnvelope::parse(body_bytes(req.body));
      status = m_node.put_object(id, env, origin, sig, req.remote_addr);
    }
    catch (const Error& e) {
      m_node.log_rejected(req.remote_addr, "PUT", text);
      res.status = 400;
      res.set_content(e.what(), "text/plain");
      return;
    }
    res.status = put_http_status(status);
    res.set_header("X-OCDN-Status", std::string(net::to_string(status)));
  });

  s.Get(R"(/plain/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::string path;
    try {
      path = body_string(from_hex(req.matches[1].str()));
    }
    catch (const Error&) {
      res.status = 400;
      return;
    }
    auto body = m_node.get_plain(path, req.remote_addr);
    if (!body) {
      res.status = 404;
      return;
    }
    res.set_content(body_string(*body), kOctets);
  });

  s.Put(R"(/plain/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto path = body_string(from_hex(req.matches[1].str()));
      m_node.put_plain(path, body_bytes(req.body), req.remote_addr);
      res.status = 201;
    }
    catch (const Error&) {
      res.status = 400;
    }
  });

  s.Get("/admin/log", [this](const httplib::Request& req, httplib::Response& res) {
    if (!is_loopback(req.remote_addr)) {
      res.status = 403;
      return;
    }
    std::string out;
    for (const auto& rec : m_node.dump_log())
      out += rec.to_json() + "\n";
    res.set_content(out, "application/x-ndjson");
  });
}

HttpCacheEndpoint::HttpCacheEndpoint(std::string address, std::chrono::milliseconds timeout)
  : m_address(std::move(address))
  , m_timeout(timeout)
{
  split_host_port(m_address);
}

net::PutStatus HttpCacheEndpoint::put(const core::ObfuscatedId& id,
                                      const core::ContentEnvelope& env,
                                      const core::PublicKey& origin, ByteView signature)
{
  auto cli = client_for(m_address, m_timeout);
  httplib::Headers headers{{"X-OCDN-Origin", to_base64(origin.der())},
                           {"X-OCDN-Sig", to_base64(signature)}};
  auto r = cli->Put("/cache/" + id.hex(), headers, body_string(env.serialize()), kOctets);
  if (!r)
    transport_failure(m_address, r);
  if (r->status == 400)
    throw MalformedError(m_address + " rejected put: " + r->body);
  if (!r->has_header("X-OCDN-Status"))
    throw TransportError(m_address + ": unexpected status " + std::to_string(r->status));
  return put_status_from(r->get_header_value("X-OCDN-Status"));
}

std::optional<core::ContentEnvelope> HttpCacheEndpoint::get(const core::ObfuscatedId& id)
{
  auto cli = client_for(m_address, m_timeout);
  auto r = cli->Get("/cache/" + id.hex());
  if (!r)
    transport_failure(m_address, r);
  if (r->status == 404)
    return std::nullopt;
  if (r->status != 200)
    throw TransportError(m_address + ": status " + std::to_string(r->status));
  return core::ContentEnvelope::parse(body_bytes(r->body));
}

void HttpCacheEndpoint::put_plain(const std::string& path, ByteView body)
{
  auto cli = client_for(m_address, m_timeout);
  auto r = cli->Put("/plain/" + to_hex(as_bytes(path)), body_string(body), kOctets);
  if (!r)
    transport_failure(m_address, r);
  if (r->status != 201)
    throw TransportError(m_address + ": plaintext put status " + std::to_string(r->status));
}

std::optional<Bytes> HttpCacheEndpoint::get_plain(const std::string& path)
{
  auto cli = client_for(m_address, m_timeout);
  auto r = cli->Get("/plain/" + to_hex(as_bytes(path)));
  if (!r)
    transport_failure(m_address, r);
  if (r->status == 404)
    return std::nullopt;
  if (r->status != 200)
    throw TransportError(m_address + ": status " + std::to_string(r->status));
  return body_bytes(r->body);
}

std::vector<cache::AccessLogRecord> HttpCacheEndpoint::fetch_log()
{
  auto cli = client_for(m_address, m_timeout);
  auto r = cli->Get("/admin/log");
  if (!r)
    transport_failure(m_address, r);
  if (r->status != 200)
    throw TransportError(m_address + ": log status " + std::to_string(r->status));
  std::vector<cache::AccessLogRecord> out;
  std::istringstream in(r->body);
  for (std::string line; std::getline(in, line);)
    if (!line.empty())
      out.push_back(cache::AccessLogRecord::from_json(line));
  return out;
}

// ---------------------------------------------------------------------------

RelayHttpServer::RelayHttpServer(net::RelayHandler& handler, client::PeerTable* peers)
  : m_handler(handler)
  , m_peers(peers)
{
  auto& s = server();

  s.Post("/ocdn/relay", [this](const httplib::Request& req, httplib::Response& res) {
    net::RelayMessage msg;
    try {
      msg.sealed_session_key = from_base64(req.get_header_value("X-OCDN"));
      msg.route = net::RelayMessage::parse_route(req.get_header_value("X-OCDN-Route"));
      msg.request_id = request_id_from(req.get_header_value("X-OCDN-Req"));
      msg.encrypted_url = body_bytes(req.body);
    }
    catch (const Error&) {
      res.status = 400;
      return;
    }
    m_handler.on_relay(msg, sender(req));
    res.status = 202;
  });

  s.Post("/ocdn/deliver", [this](const httplib::Request& req, httplib::Response& res) {
    net::DeliverMessage msg;
    try {
      msg.request_id = request_id_from(req.get_header_value("X-OCDN-Req"));
      msg.body = body_bytes(req.body);
    }
    catch (const Error&) {
      res.status = 400;
      return;
    }
    m_handler.on_deliver(msg, sender(req));
    res.status = 202;
  });

  s.Get("/ocdn/peers", [this](const httplib::Request&, httplib::Response& res) {
    auto* peers = m_peers.load();
    if (peers == nullptr) {
      res.status = 404;
      return;
    }
    std::string out;
    for (const auto& a : peers->snapshot())
      out += a.to_line() + "\n";
    res.set_content(out, "text/plain");
  });

  s.Post("/ocdn/announce", [this](const httplib::Request& req, httplib::Response& res) {
    auto* peers = m_peers.load();
    if (peers == nullptr) {
      res.status = 404;
      return;
    }
    std::vector<client::Announcement> entries;
    std::istringstream in(req.body);
    try {
      for (std::string line; std::getline(in, line);)
        if (!line.empty())
          entries.push_back(client::Announcement::from_line(line));
    }
    catch (const Error&) {
      res.status = 400;
      return;
    }
    res.set_content(std::to_string(peers->merge(entries)) + "\n", "text/plain");
  });
}

bool HttpRelayNetwork::send_relay(const std::string&, const std::string& to,
                                  const net::RelayMessage& msg)
{
  try {
    auto cli = client_for(to, m_timeout);
    httplib::Headers headers{{"X-OCDN", to_base64(msg.sealed_session_key)},
                             {"X-OCDN-Route", msg.route_header()},
                             {"X-OCDN-Req", to_hex(msg.request_id)}};
    auto r = cli->Post("/ocdn/relay", headers, body_string(msg.encrypted_url), kOctets);
    return r && r->status == 202;
  }
  catch (const Error&) {
    return false;
  }
}

bool HttpRelayNetwork::send_deliver(const std::string&, const std::string& to,
                                    const net::DeliverMessage& msg)
{
  try {
    auto cli = client_for(to, m_timeout);
    httplib::Headers headers{{"X-OCDN-Req", to_hex(msg.request_id)}};
    auto r = cli->Post("/ocdn/deliver", headers, body_string(msg.body), kOctets);
    return r && r->status == 202;
  }
  catch (const Error&) {
    return false;
  }
}

std::vector<client::Announcement> HttpRelayNetwork::fetch_peers(const std::string& address)
{
  auto cli = client_for(address, m_timeout);
  auto r = cli->Get("/ocdn/peers");
  if (!r)
    transport_failure(address, r);
  if (r->status != 200)
    throw TransportError(address + ": peers status " + std::to_string(r->status));
  std::vector<client::Announcement> out;
  std::istringstream in(r->body);
  for (std::string line; std::getline(in, line);)
    if (!line.empty())
      out.push_back(client::Announcement::from_line(line));
  return out;
}

void HttpRelayNetwork::announce(const std::string& address,
                                const std::vector<client::Announcement>& entries)
{
  std::string body;
  for (const auto& a : entries)
    body += a.to_line() + "\n";
  auto cli = client_for(address, m_timeout);
  auto r = cli->Post("/ocdn/announce", body, "text/plain");
  if (!r)
    transport_failure(address, r);
  if (r->status != 200)
    throw TransportError(address + ": announce status " + std::to_string(r->status));
}

// ---------------------------------------------------------------------------
// Line-oriented TCP for key queries

namespace {

constexpr std::size_t kMaxLine = 64 * 1024;

void set_timeouts(int fd, std::chrono::milliseconds timeout)
{
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

bool send_all(int fd, std::string_view data)
{
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0)
      return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

/// Reads one '\n'-terminated line into `line`, keeping any excess in `buffer`.
bool read_line(int fd, std::string& buffer, std::string& line)
{
  for (;;) {
    auto nl = buffer.find('\n');
    if (nl != std::string::npos) {
      line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      return true;
    }
    if (buffer.size() > kMaxLine)
      return false;
    char chunk[4096];
    auto n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n <= 0)
      return false;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

struct AddrInfo
{
  addrinfo* list = nullptr;
  ~AddrInfo()
  {
    if (list)
      freeaddrinfo(list);
  }
};

void resolve(const std::string& host, int port, bool passive, AddrInfo& out)
{
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive)
    hints.ai_flags = AI_PASSIVE;
  auto service = std::to_string(port);
  int rc = getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &out.list);
  if (rc != 0)
    throw TransportError("resolve " + host + ": " + gai_strerror(rc));
}

} // namespace

KeyLineServer::KeyLineServer(keydist::KeyAuthority& authority) : m_authority(authority) {}

KeyLineServer::~KeyLineServer() { stop(); }

int KeyLineServer::bind(const std::string& host, int port)
{
  AddrInfo ai;
  resolve(host, port, true, ai);
  for (auto* p = ai.list; p; p = p->ai_next) {
    int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0)
      continue;
    int yes = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    if (::bind(fd, p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      sockaddr_storage bound{};
      socklen_t len = sizeof bound;
      getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
      m_port = bound.ss_family == AF_INET6
                 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                 : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
      m_listen_fd = fd;
      m_running = true;
      return m_port;
    }
    ::close(fd);
  }
  throw TransportError("cannot bind " + host + ":" + std::to_string(port));
}

void KeyLineServer::start()
{
  m_thread = std::thread([this] { serve(); });
}

void KeyLineServer::serve()
{
  while (m_running) {
    int fd = ::accept(m_listen_fd, nullptr, nullptr);
    if (fd < 0) {
      if (!m_running)
        break;
      continue;
    }
    set_timeouts(fd, std::chrono::seconds(30));
    std::lock_guard lock(m_mutex);
    if (!m_running) {
      ::close(fd);
      break;
    }
    m_clients.push_back(fd);
    std::thread([this, fd] { handle(fd); }).detach();
  }
}

void KeyLineServer::handle(int fd)
{
  std::string buffer, line;
  while (read_line(fd, buffer, line)) {
    if (line.empty())
      continue;
    if (!send_all(fd, m_authority.handle_line(line) + "\n"))
      break;
  }
  std::lock_guard lock(m_mutex);
  m_clients.erase(std::find(m_clients.begin(), m_clients.end(), fd));
  ::close(fd);
  m_idle.notify_all();
}

void KeyLineServer::stop()
{
  if (!m_running.exchange(false)) {
    if (m_thread.joinable())
      m_thread.join();
    return;
  }
  ::shutdown(m_listen_fd, SHUT_RDWR);
  ::close(m_listen_fd);
  m_listen_fd = -1;
  if (m_thread.joinable())
    m_thread.join();
  std::unique_lock lock(m_mutex);
  for (int fd : m_clients)
    ::shutdown(fd, SHUT_RDWR);
  m_idle.wait(lock, [this] { return m_clients.empty(); });
}

TcpKeyChannel::TcpKeyChannel(std::string address, std::chrono::milliseconds timeout)
  : m_address(std::move(address))
  , m_timeout(timeout)
{
  split_host_port(m_address);
}

std::string TcpKeyChannel::exchange(const std::string& query_line)
{
  auto [host, port] = split_host_port(m_address);
  AddrInfo ai;
  resolve(host, port, false, ai);
  int fd = -1;
  for (auto* p = ai.list; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0)
      continue;
    set_timeouts(fd, m_timeout);
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0)
      break;
    ::close(fd);
    fd = -1;
  }
  if (fd < 0)
    throw TransportError("cannot connect to key server " + m_address);

  std::string buffer, line;
  bool ok = send_all(fd, query_line + "\n") && read_line(fd, buffer, line);
  ::close(fd);
  if (!ok)
    throw TransportError("no answer from key server " + m_address);
  return line;
}

} // namespace ocdn::http
