#include "ocdn/clientproxy.hpp"

#include <charconv>
#include <sstream>

namespace ocdn::client {

Mode Mode::parse(std::string_view text)
{
  if (text == "direct")
    return direct();
  auto colon = text.find(':');
  if (colon == std::string_view::npos)
    throw MalformedError("unknown mode '" + std::string(text) + "'");
  auto kind = text.substr(0, colon);
  auto count_text = text.substr(colon + 1);
  unsigned n = 0;
  auto [ptr, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), n);
  if (ec != std::errc{} || ptr != count_text.data() + count_text.size() || count_text.empty())
    throw MalformedError("bad peer count in mode '" + std::string(text) + "'");
  if (kind == "routed")
    return routed(n);
  if (kind == "spoofed_direct")
    return spoofed_direct(n);
  throw MalformedError("unknown mode '" + std::string(text) + "'");
}

std::string Mode::to_string() const
{
  switch (kind) {
  case Kind::Direct:
    return "direct";
  case Kind::Routed:
    return "routed:" + std::to_string(peers);
  case Kind::SpoofedDirect:
    return "spoofed_direct:" + std::to_string(peers);
  }
  return "direct";
}

// ---------------------------------------------------------------------------

Bytes Announcement::signed_bytes() const
{
  Bytes out(as_bytes("OCDN-ANNOUNCE-v1").begin(), as_bytes("OCDN-ANNOUNCE-v1").end());
  put_u32_be(out, static_cast<std::uint32_t>(address.size()));
  append(out, as_bytes(address));
  append(out, peer_key);
  put_u64_be(out, static_cast<std::uint64_t>(timestamp_ms));
  out.push_back(leave ? 1 : 0);
  return out;
}

Announcement Announcement::make(const core::PeerIdentity& identity, std::string address,
                                std::int64_t timestamp_ms, bool leave)
{
  Announcement a{std::move(address), identity.public_raw(), timestamp_ms, leave, {}};
  a.signature = identity.sign(a.signed_bytes());
  return a;
}

bool Announcement::verify() const
{
  return !address.empty() && core::PeerIdentity::verify(peer_key, signed_bytes(), signature);
}

std::string Announcement::to_line() const
{
  std::ostringstream out;
  out << "announce " << address << ' ' << to_base64(peer_key) << ' ' << timestamp_ms << ' '
      << (leave ? "leave" : "join") << ' ' << to_base64(signature);
  return out.str();
}

Announcement Announcement::from_line(std::string_view line)
{
  std::istringstream in{std::string(line)};
  std::string tag, address, key, kind, sig;
  std::int64_t ts = 0;
  if (!(in >> tag >> address >> key >> ts >> kind >> sig) || tag != "announce" ||
      (kind != "join" && kind != "leave"))
    throw MalformedError("bad announcement");
  return {address, from_base64(key), ts, kind == "leave", from_base64(sig)};
}

PeerTable::PeerTable(std::string self, const Clock& clock, std::int64_t inactivity_ms)
  : m_self(std::move(self))
  , m_clock(clock)
  , m_inactivity_ms(inactivity_ms)
{
}

bool PeerTable::fresh(const Announcement& a, std::int64_t now) const
{
  return now - a.timestamp_ms < m_inactivity_ms && a.timestamp_ms - now < m_inactivity_ms;
}

bool PeerTable::apply(const Announcement& a)
{
  if (!a.verify())
    return false;
  std::lock_guard lock(m_mutex);
  if (!fresh(a, m_clock.now_ms()))
    return false;
  auto it = m_entries.find(a.address);
  if (it != m_entries.end()) {
    if (it->second.peer_key != a.peer_key || a.timestamp_ms <= it->second.timestamp_ms)
      return false;
    it->second = a;
    return true;
  }
  m_entries.emplace(a.address, a);
  return true;
}

std::size_t PeerTable::merge(const std::vector<Announcement>& entries)
{
  std::size_t changed = 0;
  for (const auto& a : entries)
    changed += apply(a) ? 1 : 0;
  return changed;
}

std::vector<Announcement> PeerTable::snapshot() const
{
  std::lock_guard lock(m_mutex);
  std::vector<Announcement> out;
  for (const auto& [addr, a] : m_entries)
    out.push_back(a);
  return out;
}

void PeerTable::prune()
{
  std::lock_guard lock(m_mutex);
  auto now = m_clock.now_ms();
  std::erase_if(m_entries, [&](const auto& kv) { return !fresh(kv.second, now); });
}

std::vector<std::string> PeerTable::live_peers() const
{
  std::lock_guard lock(m_mutex);
  auto now = m_clock.now_ms();
  std::vector<std::string> out;
  for (const auto& [addr, a] : m_entries)
    if (addr != m_self && !a.leave && fresh(a, now))
      out.push_back(addr);
  return out;
}

bool PeerTable::contains(const std::string& address) const
{
  auto live = live_peers();
  return std::find(live.begin(), live.end(), address) != live.end();
}

// ---------------------------------------------------------------------------

ExitDirectory::ExitDirectory(ring::Roster roster, unsigned virtual_points, unsigned replication)
  : m_virtual_points(virtual_points)
  , m_replication(replication)
{
  auto r = roster.ring(virtual_points, replication);
  m_ring = std::make_shared<const ring::Ring>(r);
  m_snapshot = std::make_shared<const Snapshot>(Snapshot{std::move(roster), std::move(r)});
}

bool ExitDirectory::update(ring::Roster roster)
{
  auto r = roster.ring(m_virtual_points, m_replication);
  std::lock_guard lock(m_mutex);
  if (roster.version <= m_snapshot->roster.version)
    return false;
  m_ring = std::make_shared<const ring::Ring>(r);
  m_snapshot = std::make_shared<const Snapshot>(Snapshot{std::move(roster), std::move(r)});
  return true;
}

ExitInfo ExitDirectory::lookup(const core::CanonicalUrl& url) const
{
  std::shared_ptr<const Snapshot> snap;
  {
    std::lock_guard lock(m_mutex);
    snap = m_snapshot;
  }
  auto owner = snap->ring.owners_of(ring::position_of_url(url, 0)).front();
  const auto* entry = snap->roster.find(owner);
  return {owner, entry->address, entry->public_key};
}

std::uint64_t ExitDirectory::version() const
{
  std::lock_guard lock(m_mutex);
  return m_snapshot->roster.version;
}

std::shared_ptr<const ring::Ring> ExitDirectory::ring() const
{
  std::lock_guard lock(m_mutex);
  return m_ring;
}

// ---------------------------------------------------------------------------

ClientProxy::ClientProxy(std::string address, ExitDirectory& directory, PeerTable& peers,
                         net::RelayNetwork& network, RandomSource& rng)
  : m_address(std::move(address))
  , m_directory(directory)
  , m_peers(peers)
  , m_network(network)
  , m_rng(rng)
{
}

std::vector<std::string> ClientProxy::pick_peers(unsigned n)
{
  // live_peers() is sorted, so the draw depends only on the table and the generator.
  auto live = m_peers.live_peers();
  if (live.size() < n)
    throw InsufficientPeers("need " + std::to_string(n) + " peers, know " +
                            std::to_string(live.size()));
  std::vector<std::string> chosen;
  for (unsigned i = 0; i < n; ++i) {
    auto k = m_rng.uniform(live.size());
    chosen.push_back(std::move(live[k]));
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return chosen;
}

BuiltRequest ClientProxy::build_request(const core::CanonicalUrl& url, Mode mode)
{
  net::RequestId request;
  ExitInfo exit;
  {
    std::lock_guard lock(m_mutex);
    m_rng.fill(request);
  }
  {
    metrics::ScopedOp op(m_recorder, metrics::Op::ExitLookup, request, url.text().size());
    exit = m_directory.lookup(url);
  }

  std::lock_guard lock(m_mutex);
  BuiltRequest out;
  out.exit = exit;
  out.session_key = core::SessionKey::generate(m_rng);
  out.message.request_id = request;
  out.message.sealed_session_key = core::seal_session_key(exit.public_key, out.session_key);
  out.message.encrypted_url = core::encrypt_url(out.session_key, url, m_rng);

  auto& route = out.message.route;
  switch (mode.kind) {
  case Mode::Kind::Direct:
    route = {m_address, exit.address};
    out.first_hop = exit.address;
    break;
  case Mode::Kind::Routed: {
    auto hops = pick_peers(mode.peers);
    route.push_back(m_address);
    route.insert(route.end(), hops.begin(), hops.end());
    route.push_back(exit.address);
    out.first_hop = route[1];
    break;
  }
  case Mode::Kind::SpoofedDirect: {
    route = pick_peers(mode.peers);
    route.push_back(m_address);
    route.push_back(exit.address);
    out.first_hop = exit.address;
    break;
  }
  }
  // An exit that is also listed as a peer would create a loop.
  for (std::size_t i = 0; i + 1 < route.size(); ++i)
    if (route[i] == exit.address)
      throw InsufficientPeers("exit address appears as a peer hop");
  return out;
}

net::RequestId ClientProxy::send(const core::CanonicalUrl& url, Mode mode)
{
  auto built = build_request(url, mode);
  {
    std::lock_guard lock(m_mutex);
    m_pending[built.message.request_id] = built.session_key;
    ++m_counters.originated;
  }
  if (!m_network.send_relay(m_address, built.first_hop, built.message)) {
    std::lock_guard lock(m_mutex);
    m_pending.erase(built.message.request_id);
    throw TransportError("first hop " + built.first_hop + " unreachable");
  }
  return built.message.request_id;
}

FetchResult ClientProxy::fetch(const core::CanonicalUrl& url, Mode mode,
                               std::chrono::milliseconds timeout)
{
  for (int attempt = 0;; ++attempt) {
    auto request = send(url, mode);
    std::unique_lock lock(m_mutex);
    bool arrived = m_arrived.wait_for(lock, timeout, [&] { return m_results.contains(request); });
    if (!arrived) {
      m_pending.erase(request);
      throw TransportError("no response for " + url.text());
    }
    auto result = std::move(m_results.at(request));
    m_results.erase(request);
    lock.unlock();

    bool stale = result.status == exitproxy::ResponseStatus::UpstreamError &&
                 to_string(result.body) == keydist::to_string(keydist::RefusalCode::NotOwner);
    if (stale && attempt == 0 && m_refresh) {
      if (auto roster = m_refresh(); roster && m_directory.update(std::move(*roster)))
        continue;
    }
    return result;
  }
}

void ClientProxy::on_relay(const net::RelayMessage& msg, const std::string&)
{
  forward(msg);
}

void ClientProxy::on_deliver(const net::DeliverMessage& msg, const std::string&)
{
  accept_delivery(msg);
}

bool ClientProxy::forward(const net::RelayMessage& msg)
{
  auto it = std::find(msg.route.begin(), msg.route.end(), m_address);
  // Not on the route, or the route ends here: a client is never a terminal hop.
  if (it == msg.route.end() || std::next(it) == msg.route.end()) {
    std::lock_guard lock(m_mutex);
    ++m_counters.dropped;
    return false;
  }
  bool sent = m_network.send_relay(m_address, *std::next(it), msg);
  std::lock_guard lock(m_mutex);
  ++(sent ? m_counters.forwarded : m_counters.dropped);
  return sent;
}

std::optional<FetchResult> ClientProxy::accept_delivery(const net::DeliverMessage& msg)
{
  std::unique_lock lock(m_mutex);
  auto it = m_pending.find(msg.request_id);
  if (it == m_pending.end()) {
    ++m_counters.discarded;
    return std::nullopt;
  }
  auto key = it->second;
  lock.unlock();

  std::optional<exitproxy::Response> opened;
  {
    metrics::ScopedOp op(m_recorder, metrics::Op::ClientDecrypt, msg.request_id, msg.body.size());
    opened = exitproxy::open_response(key, msg);
  }

  lock.lock();
  if (!opened || !m_pending.contains(msg.request_id)) {
    ++m_counters.discarded;
    return std::nullopt;
  }
  m_pending.erase(msg.request_id);
  ++m_counters.accepted;
  FetchResult result{opened->status, std::move(opened->payload), msg.request_id};
  m_results[msg.request_id] = result;
  m_arrived.notify_all();
  return result;
}

std::optional<FetchResult> ClientProxy::take_result(const net::RequestId& request)
{
  std::lock_guard lock(m_mutex);
  auto it = m_results.find(request);
  if (it == m_results.end())
    return std::nullopt;
  auto out = std::move(it->second);
  m_results.erase(it);
  return out;
}

std::size_t ClientProxy::pending_size() const
{
  std::lock_guard lock(m_mutex);
  return m_pending.size();
}

ClientCounters ClientProxy::counters() const
{
  std::lock_guard lock(m_mutex);
  return m_counters;
}

} // namespace ocdn::client
