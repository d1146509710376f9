#include "ocdn/cachenode.hpp"

#include "json.hpp"

namespace ocdn::cache {

using nlohmann::json;

std::string AccessLogRecord::to_json() const
{
  return json{{"time_ms", time_ms}, {"peer", peer}, {"verb", verb}, {"id", id}}.dump();
}

AccessLogRecord AccessLogRecord::from_json(std::string_view line)
{
  try {
    auto j = json::parse(line);
    return {j.at("time_ms").get<std::int64_t>(), j.at("peer").get<std::string>(),
            j.at("verb").get<std::string>(), j.at("id").get<std::string>()};
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("bad log record: ") + e.what());
  }
}

CacheNode::CacheNode(const Clock& clock, CacheNodeConfig config)
  : m_clock(clock)
  , m_config(std::move(config))
{
  for (const auto& k : m_config.trusted_origins)
    m_trusted.push_back(k.fingerprint());
}

void CacheNode::log(const std::string& peer, std::string verb, std::string id)
{
  m_log.push_back({m_clock.now_ms(), peer, std::move(verb), std::move(id)});
}

void CacheNode::log_rejected(const std::string& peer, const std::string& verb,
                             const std::string& id_text)
{
  std::lock_guard lock(m_mutex);
  log(peer, verb, id_text);
}

bool CacheNode::trusted(const core::Digest& fingerprint) const
{
  return std::find(m_trusted.begin(), m_trusted.end(), fingerprint) != m_trusted.end();
}

void CacheNode::touch(Slot& slot)
{
  m_lru.splice(m_lru.begin(), m_lru, slot.lru);
}

void CacheNode::evict_locked()
{
  while (m_stored_bytes > m_config.capacity_bytes && m_lru.size() > 1) {
    auto victim = m_store.find(m_lru.back());
    m_stored_bytes -= victim->second.entry.envelope.size();
    m_store.erase(victim);
    m_lru.pop_back();
  }
}

net::PutStatus CacheNode::put_object(const core::ObfuscatedId& id,
                                     const core::ContentEnvelope& env,
                                     const core::PublicKey& origin, ByteView signature,
                                     const std::string& peer)
{
  std::lock_guard lock(m_mutex);
  log(peer, "PUT", id.hex());

  if (!core::verify_update(origin, id, env, signature))
    return net::PutStatus::BadSignature;
  auto fingerprint = origin.fingerprint();
  Bytes wire = env.serialize();

  auto it = m_store.find(id);
  if (it != m_store.end()) {
    // updates must come from the origin that populated the entry
    if (it->second.entry.origin_fingerprint != fingerprint)
      return net::PutStatus::OriginMismatch;
    touch(it->second);
    if (it->second.entry.envelope == wire)
      return net::PutStatus::Unchanged;
    m_stored_bytes -= it->second.entry.envelope.size();
    m_stored_bytes += wire.size();
    it->second.entry.envelope = std::move(wire);
    it->second.entry.stored_at = m_clock.now_ms();
    evict_locked();
    return net::PutStatus::Stored;
  }

  if (m_config.strict_allowlist && !trusted(fingerprint))
    return net::PutStatus::Untrusted;

  m_lru.push_front(id);
  m_stored_bytes += wire.size();
  m_store.emplace(id, Slot{CacheEntry{id, std::move(wire), fingerprint, m_clock.now_ms()},
                           m_lru.begin()});
  evict_locked();
  return net::PutStatus::Stored;
}

std::optional<Bytes> CacheNode::get_object(const core::ObfuscatedId& id, const std::string& peer)
{
  std::lock_guard lock(m_mutex);
  log(peer, "GET", id.hex());
  ++m_gets;
  auto it = m_store.find(id);
  if (it == m_store.end())
    return std::nullopt;
  touch(it->second);
  return it->second.entry.envelope;
}

void CacheNode::put_plain(const std::string& path, ByteView body, const std::string& peer)
{
  std::lock_guard lock(m_mutex);
  log(peer, "PUT", "plain:" + path);
  m_plain[path] = Bytes(body.begin(), body.end());
}

std::optional<Bytes> CacheNode::get_plain(const std::string& path, const std::string& peer)
{
  std::lock_guard lock(m_mutex);
  log(peer, "GET", "plain:" + path);
  ++m_gets;
  auto it = m_plain.find(path);
  if (it == m_plain.end())
    return std::nullopt;
  return it->second;
}

std::size_t CacheNode::log_size() const
{
  std::lock_guard lock(m_mutex);
  return m_log.size();
}

std::vector<AccessLogRecord> CacheNode::dump_log() const
{
  std::lock_guard lock(m_mutex);
  return m_log;
}

std::vector<CacheEntry> CacheNode::entries() const
{
  std::lock_guard lock(m_mutex);
  std::vector<CacheEntry> out;
  out.reserve(m_lru.size());
  for (const auto& id : m_lru)
    out.push_back(m_store.at(id).entry);
  return out;
}

Bytes CacheNode::stored_bytes() const
{
  std::lock_guard lock(m_mutex);
  Bytes out;
  for (const auto& [id, slot] : m_store) {
    append(out, id.bytes);
    append(out, slot.entry.origin_fingerprint);
    append(out, slot.entry.envelope);
  }
  for (const auto& [path, body] : m_plain) {
    append(out, as_bytes(path));
    append(out, body);
  }
  return out;
}

std::size_t CacheNode::size() const
{
  std::lock_guard lock(m_mutex);
  return m_store.size();
}

std::uint64_t CacheNode::stored_size() const
{
  std::lock_guard lock(m_mutex);
  return m_stored_bytes;
}

std::uint64_t CacheNode::gets() const
{
  std::lock_guard lock(m_mutex);
  return m_gets;
}

// ---------------------------------------------------------------------------

net::PutStatus LocalCacheEndpoint::put(const core::ObfuscatedId& id,
                                       const core::ContentEnvelope& env,
                                       const core::PublicKey& origin, ByteView signature)
{
  return m_node.put_object(id, env, origin, signature, m_peer);
}

std::optional<core::ContentEnvelope> LocalCacheEndpoint::get(const core::ObfuscatedId& id)
{
  auto wire = m_node.get_object(id, m_peer);
  if (!wire)
    return std::nullopt;
  return core::ContentEnvelope::parse(*wire);
}

void LocalCacheEndpoint::put_plain(const std::string& path, ByteView body)
{
  m_node.put_plain(path, body, m_peer);
}

std::optional<Bytes> LocalCacheEndpoint::get_plain(const std::string& path)
{
  return m_node.get_plain(path, m_peer);
}

} // namespace ocdn::cache
