#include "ocdn/keydist.hpp"

#include "json.hpp"

namespace ocdn::keydist {

using nlohmann::json;

std::string_view to_string(RefusalCode code)
{
  switch (code) {
  case RefusalCode::BadId:
    return "BAD_ID";
  case RefusalCode::NotOwner:
    return "NOT_OWNER";
  case RefusalCode::Unknown:
    return "UNKNOWN";
  case RefusalCode::Malformed:
    return "MALFORMED";
  }
  return "MALFORMED";
}

RefusalCode refusal_from_string(std::string_view text)
{
  if (text == "BAD_ID")
    return RefusalCode::BadId;
  if (text == "NOT_OWNER")
    return RefusalCode::NotOwner;
  if (text == "UNKNOWN")
    return RefusalCode::Unknown;
  return RefusalCode::Malformed;
}

std::string KeyQuery::to_line() const
{
  return json{{"qname", url.text()},
              {"proxy_id", proxy_id.display()},
              {"proxy_pub", to_base64(proxy_pub.der())}}
    .dump();
}

KeyQuery KeyQuery::from_line(std::string_view line)
{
  try {
    auto j = json::parse(line);
    return {core::CanonicalUrl::parse(j.at("qname").get<std::string>()),
            ring::SelfCertifyingId::parse(j.at("proxy_id").get<std::string>()),
            core::PublicKey::from_der(from_base64(j.at("proxy_pub").get<std::string>()))};
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("bad key query: ") + e.what());
  }
}

std::string answer_to_line(const KeyAnswer& answer)
{
  if (const auto* code = std::get_if<RefusalCode>(&answer))
    return json{{"status", "REFUSED"}, {"code", to_string(*code)}}.dump();
  const auto& rec = std::get<KeyRecord>(answer);
  return json{{"status", "OK"},
              {"srv",
               {{"target", rec.url_pattern},
                {"priority", 0},
                {"sealed_key", to_base64(rec.sealed_key)},
                {"key_id", to_hex(rec.key_id)},
                {"expires_at", rec.expires_at},
                {"encodings", rec.encodings}}}}
    .dump();
}

KeyAnswer answer_from_line(std::string_view line)
{
  try {
    auto j = json::parse(line);
    auto status = j.at("status").get<std::string>();
    if (status == "REFUSED")
      return refusal_from_string(j.at("code").get<std::string>());
    if (status != "OK")
      throw MalformedError("unknown key answer status " + status);
    const auto& srv = j.at("srv");
    KeyRecord rec;
    rec.url_pattern = srv.at("target").get<std::string>();
    rec.sealed_key = from_base64(srv.at("sealed_key").get<std::string>());
    Bytes kid = from_hex(srv.at("key_id").get<std::string>());
    if (kid.size() != core::kKeyIdBytes)
      throw MalformedError("key id must be 8 bytes");
    std::copy(kid.begin(), kid.end(), rec.key_id.begin());
    rec.expires_at = srv.at("expires_at").get<std::int64_t>();
    rec.encodings = srv.value("encodings", 1u);
    return rec;
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("bad key answer: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

KeyAuthority::KeyAuthority(KeySource& source, ring::Ring ring)
  : m_source(source)
  , m_ring(std::make_shared<const ring::Ring>(std::move(ring)))
{
}

void KeyAuthority::set_ring(ring::Ring ring)
{
  auto snapshot = std::make_shared<const ring::Ring>(std::move(ring));
  std::lock_guard lock(m_mutex);
  m_ring = std::move(snapshot);
}

std::shared_ptr<const ring::Ring> KeyAuthority::ring() const
{
  std::lock_guard lock(m_mutex);
  return m_ring;
}

KeyAnswer KeyAuthority::answer_key_query(const KeyQuery& q)
{
  ++m_queries;
  if (!ring::verify_member(q.proxy_id, q.proxy_pub))
    return RefusalCode::BadId;
  auto grant = m_source.lookup(q.url);
  if (!grant)
    return RefusalCode::Unknown;

  auto snapshot = ring();
  bool owner = false;
  for (std::uint32_t i = 0; i < grant->encodings && !owner; ++i) {
    try {
      owner = snapshot->is_owner(q.proxy_id, ring::position_of_url(q.url, i));
    }
    catch (const ring::InsufficientMembers&) {
      return RefusalCode::NotOwner;
    }
  }
  if (!owner)
    return RefusalCode::NotOwner;

  KeyRecord rec;
  rec.url_pattern = grant->url_pattern;
  rec.sealed_key = core::rsa_seal(q.proxy_pub, grant->key.bytes());
  rec.key_id = grant->key.key_id();
  rec.expires_at = grant->key.expires_at();
  rec.encodings = grant->encodings;
  return rec;
}

std::string KeyAuthority::handle_line(std::string_view line)
{
  try {
    return answer_to_line(answer_key_query(KeyQuery::from_line(line)));
  }
  catch (const Error&) {
    return answer_to_line(RefusalCode::Malformed);
  }
}

std::string LocalKeyChannel::exchange(const std::string& query_line)
{
  if (m_failing)
    throw TransportError("key service unreachable");
  ++m_round_trips;
  std::string answer = m_authority.handle_line(query_line);
  std::lock_guard lock(m_mutex);
  m_wire.push_back(query_line);
  m_wire.push_back(answer);
  return answer;
}

std::vector<std::string> LocalKeyChannel::wire() const
{
  std::lock_guard lock(m_mutex);
  return m_wire;
}

// ---------------------------------------------------------------------------

void OriginDirectory::add(std::string url_prefix, std::shared_ptr<net::KeyQueryChannel> channel)
{
  m_entries.emplace_back(std::move(url_prefix), std::move(channel));
}

net::KeyQueryChannel* OriginDirectory::channel_for(const core::CanonicalUrl& url) const
{
  net::KeyQueryChannel* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& [prefix, channel] : m_entries) {
    if (url.text().starts_with(prefix) && (best == nullptr || prefix.size() > best_len)) {
      best = channel.get();
      best_len = prefix.size();
    }
  }
  return best;
}

KeyFetcher::KeyFetcher(const core::KeyPair& proxy, ring::SelfCertifyingId self,
                       const OriginDirectory& directory, const Clock& clock,
                       std::int64_t cache_ttl_s)
  : m_proxy(proxy)
  , m_self(std::move(self))
  , m_directory(directory)
  , m_clock(clock)
  , m_cache_ttl_s(cache_ttl_s)
{
}

std::shared_ptr<KeyFetcher::Slot> KeyFetcher::slot_for(const core::CanonicalUrl& url)
{
  std::lock_guard lock(m_mutex);
  auto& slot = m_slots[url.text()];
  if (!slot)
    slot = std::make_shared<Slot>();
  return slot;
}

FetchedKey KeyFetcher::fetch_key(const core::CanonicalUrl& url)
{
  auto slot = slot_for(url);
  // Concurrent callers for the same URL queue here; the first one refreshes.
  std::lock_guard lock(slot->mutex);
  std::int64_t now = m_clock.now_seconds();
  if (slot->cached && now < slot->cached->cache_until)
    return *slot->cached;
  slot->cached.reset();

  auto* channel = m_directory.channel_for(url);
  if (channel == nullptr)
    throw KeyRefused(RefusalCode::Unknown);
  KeyQuery q{url, m_self, m_proxy.public_key()};
  ++m_round_trips;
  auto answer = answer_from_line(channel->exchange(q.to_line()));
  if (const auto* code = std::get_if<RefusalCode>(&answer))
    throw KeyRefused(*code);
  const auto& rec = std::get<KeyRecord>(answer);
  if (rec.expires_at <= now)
    throw KeyRefused(RefusalCode::Unknown);
  Bytes raw = core::rsa_open(m_proxy, rec.sealed_key);
  auto key = core::SharedKey::from_bytes(raw, now, rec.expires_at);
  if (key.key_id() != rec.key_id)
    throw MalformedError("key id does not match the sealed key");
  FetchedKey fetched{key, std::max<std::uint32_t>(rec.encodings, 1), rec.url_pattern,
                     std::min(rec.expires_at, now + m_cache_ttl_s)};
  slot->cached = fetched;
  return fetched;
}

void KeyFetcher::invalidate(const core::CanonicalUrl& url)
{
  auto slot = slot_for(url);
  std::lock_guard lock(slot->mutex);
  slot->cached.reset();
}

} // namespace ocdn::keydist
