#include "ocdn/exitproxy.hpp"

namespace ocdn::exitproxy {

std::string_view to_string(ResponseStatus s)
{
  switch (s) {
  case ResponseStatus::Ok:
    return "ok";
  case ResponseStatus::NotFound:
    return "not-found";
  case ResponseStatus::UpstreamError:
    return "upstream-error";
  case ResponseStatus::IntegrityError:
    return "integrity-error";
  case ResponseStatus::BadRequest:
    return "bad-request";
  }
  return "unknown";
}

Bytes seal_response(const core::SessionKey& key, const net::RequestId& request,
                    ResponseStatus status, ByteView payload, RandomSource& rng)
{
  Bytes plain;
  plain.reserve(payload.size() + 1);
  plain.push_back(static_cast<std::uint8_t>(status));
  append(plain, payload);
  return core::aead_encrypt(key.bytes, plain, request, rng);
}

std::optional<Response> open_response(const core::SessionKey& key, const net::DeliverMessage& msg)
{
  Bytes plain;
  try {
    plain = core::aead_decrypt(key.bytes, msg.body, msg.request_id);
  }
  catch (const Error&) {
    return std::nullopt;
  }
  if (plain.empty() || plain[0] > static_cast<std::uint8_t>(ResponseStatus::BadRequest))
    return std::nullopt;
  return Response{static_cast<ResponseStatus>(plain[0]), Bytes(plain.begin() + 1, plain.end())};
}

std::size_t sealed_response_size(std::size_t payload_len)
{
  return core::kNonceBytes + 1 + payload_len + core::kTagBytes;
}

// ---------------------------------------------------------------------------

FlashcrowdCache::FlashcrowdCache(const Clock& clock, FlashcrowdConfig config)
  : m_clock(clock)
  , m_config(config)
{
}

void FlashcrowdCache::trim(Window& w, std::int64_t now) const
{
  while (!w.hits.empty() && w.hits.front() <= now - m_config.window_ms)
    w.hits.pop_front();
}

bool FlashcrowdCache::admit(const core::ObfuscatedId& id)
{
  std::lock_guard lock(m_mutex);
  auto now = m_clock.now_ms();
  auto& w = m_windows[id];
  w.hits.push_back(now);
  trim(w, now);

  // Occasionally drop idle windows so one-off ids do not accumulate.
  if (++m_admissions % 4096 == 0) {
    for (auto it = m_windows.begin(); it != m_windows.end();) {
      trim(it->second, now);
      it = it->second.hits.empty() ? m_windows.erase(it) : std::next(it);
    }
    for (auto it = m_entries.begin(); it != m_entries.end();)
      it = now - it->second.inserted_at >= m_config.ttl_ms ? m_entries.erase(it) : std::next(it);
  }
  double rps = double(w.hits.size()) * 1000.0 / double(m_config.window_ms);
  return rps > m_config.threshold_rps;
}

double FlashcrowdCache::rate(const core::ObfuscatedId& id)
{
  std::lock_guard lock(m_mutex);
  auto it = m_windows.find(id);
  if (it == m_windows.end())
    return 0.0;
  trim(it->second, m_clock.now_ms());
  return double(it->second.hits.size()) * 1000.0 / double(m_config.window_ms);
}

std::optional<core::ContentEnvelope> FlashcrowdCache::lookup(const core::ObfuscatedId& id)
{
  std::lock_guard lock(m_mutex);
  auto it = m_entries.find(id);
  if (it == m_entries.end())
    return std::nullopt;
  if (m_clock.now_ms() - it->second.inserted_at >= m_config.ttl_ms) {
    m_entries.erase(it);
    return std::nullopt;
  }
  return it->second.env;
}

void FlashcrowdCache::insert(const core::ObfuscatedId& id, core::ContentEnvelope env)
{
  std::lock_guard lock(m_mutex);
  m_entries.insert_or_assign(id, Entry{std::move(env), m_clock.now_ms()});
}

std::size_t FlashcrowdCache::size() const
{
  std::lock_guard lock(m_mutex);
  return m_entries.size();
}

// ---------------------------------------------------------------------------

ExitProxy::ExitProxy(ExitConfig config, const core::KeyPair& keys, keydist::KeyFetcher& fetcher,
                     std::vector<std::shared_ptr<net::CacheEndpoint>> caches,
                     net::RelayNetwork& network, const Clock& clock, RandomSource& rng)
  : m_config(std::move(config))
  , m_keys(keys)
  , m_fetcher(fetcher)
  , m_caches(std::move(caches))
  , m_network(network)
  , m_clock(clock)
  , m_rng(rng)
  , m_flash(clock, m_config.flashcrowd)
{
}

ring::SelfCertifyingId ExitProxy::id() const
{
  auto colon = m_config.address.rfind(':');
  std::string host = colon == std::string::npos ? m_config.address : m_config.address.substr(0, colon);
  return ring::SelfCertifyingId::for_key(host, m_keys.public_key());
}

void ExitProxy::on_relay(const net::RelayMessage& msg, const std::string& from)
{
  handle_request(msg, from);
}

void ExitProxy::on_deliver(const net::DeliverMessage&, const std::string&)
{
  std::lock_guard lock(m_mutex);
  ++m_counters.dropped;
}

std::uint64_t ExitProxy::pick(std::uint64_t bound)
{
  std::lock_guard lock(m_mutex);
  return m_rng.uniform(bound);
}

void ExitProxy::handle_request(const net::RelayMessage& msg, const std::string& from)
{
  if (msg.route.size() < 2 || msg.route.back() != m_config.address) {
    std::lock_guard lock(m_mutex);
    ++m_counters.dropped;
    return;
  }
  {
    std::lock_guard lock(m_mutex);
    ++m_counters.requests;
    if (m_config.record_observations)
      m_observations.push_back({msg.request_id, msg.route, from});
  }

  core::SessionKey skey;
  try {
    skey = core::open_session_key(m_keys, msg.sealed_session_key);
  }
  catch (const Error&) {
    // Nobody on the route can read this; same size as a real error response.
    Bytes noise;
    {
      std::lock_guard lock(m_mutex);
      noise = m_rng.bytes(sealed_response_size(0));
    }
    fan_out(msg.request_id, msg.route, noise);
    return;
  }

  {
    std::lock_guard lock(m_mutex);
    if (!m_pending.emplace(msg.request_id, PendingRequest{skey, msg.route, m_clock.now_ms()}).second) {
      ++m_counters.dropped;
      return;
    }
  }

  Response response = serve(msg.request_id, skey, msg.encrypted_url);
  Bytes body;
  {
    metrics::ScopedOp op(m_recorder, metrics::Op::SessionKeyEncrypt, msg.request_id,
                         response.payload.size());
    std::lock_guard lock(m_mutex);
    body = seal_response(skey, msg.request_id, response.status, response.payload, m_rng);
  }
  fan_out(msg.request_id, msg.route, body);

  std::lock_guard lock(m_mutex);
  m_pending.erase(msg.request_id);
}

Response ExitProxy::serve(const net::RequestId& request, const core::SessionKey& skey,
                          ByteView encrypted_url)
{
  core::CanonicalUrl url;
  try {
    url = core::decrypt_url(skey, encrypted_url);
  }
  catch (const Error&) {
    return {ResponseStatus::BadRequest, {}};
  }

  std::optional<keydist::FetchedKey> key;
  try {
    key = m_fetcher.fetch_key(url);
  }
  catch (const keydist::KeyRefused& e) {
    auto code = keydist::to_string(e.code());
    auto status = e.code() == keydist::RefusalCode::Unknown ? ResponseStatus::NotFound
                                                             : ResponseStatus::UpstreamError;
    return {status, Bytes(code.begin(), code.end())};
  }
  catch (const Error&) {
    std::string_view what = "KEY_UNAVAILABLE";
    return {ResponseStatus::UpstreamError, Bytes(what.begin(), what.end())};
  }

  auto index = static_cast<std::uint32_t>(
    pick(std::min<std::uint32_t>(key->encodings, m_config.max_encodings)));
  core::ObfuscatedId id;
  {
    metrics::ScopedOp op(m_recorder, metrics::Op::HmacDerivation, request, url.text().size());
    id = core::derive_obfuscated_id(key->key, url, index, m_config.max_encodings);
  }

  bool hot = m_config.flashcrowd.enabled && m_flash.admit(id);
  std::optional<core::ContentEnvelope> env;
  if (hot) {
    env = m_flash.lookup(id);
    if (env) {
      std::lock_guard lock(m_mutex);
      ++m_counters.flashcrowd_hits;
    }
  }
  bool upstream_failed = false;
  if (!env) {
    try {
      env = get_envelope(id, upstream_failed);
    }
    catch (const MalformedError&) {
      return {ResponseStatus::IntegrityError, {}};
    }
    if (env && hot)
      m_flash.insert(id, *env);
  }
  if (!env)
    return {upstream_failed ? ResponseStatus::UpstreamError : ResponseStatus::NotFound, {}};

  try {
    metrics::ScopedOp op(m_recorder, metrics::Op::SharedKeyDecrypt, request, env->padded_len);
    return {ResponseStatus::Ok, core::open_content(key->key, *env)};
  }
  catch (const Error&) {
    return {ResponseStatus::IntegrityError, {}};
  }
}

std::optional<core::ContentEnvelope> ExitProxy::get_envelope(const core::ObfuscatedId& id,
                                                             bool& upstream_failed)
{
  if (m_caches.empty()) {
    upstream_failed = true;
    return std::nullopt;
  }
  std::size_t start;
  {
    std::lock_guard lock(m_mutex);
    start = m_next_cache++ % m_caches.size();
  }
  bool answered = false;
  for (std::size_t k = 0; k < m_caches.size(); ++k) {
    auto& cache = m_caches[(start + k) % m_caches.size()];
    {
      std::lock_guard lock(m_mutex);
      ++m_counters.cache_gets;
    }
    try {
      if (auto env = cache->get(id))
        return env;
      answered = true;
    }
    catch (const TransportError&) {
    }
  }
  upstream_failed = !answered;
  return std::nullopt;
}

void ExitProxy::fan_out(const net::RequestId& request, const std::vector<std::string>& route,
                        const Bytes& body)
{
  net::DeliverMessage msg{request, body};
  // Every client on the route gets the same bytes; the terminal hop is this proxy.
  for (std::size_t i = 0; i + 1 < route.size(); ++i) {
    m_network.send_deliver(m_config.address, route[i], msg);
    std::lock_guard lock(m_mutex);
    ++m_counters.deliveries;
  }
}

std::size_t ExitProxy::pending_size() const
{
  std::lock_guard lock(m_mutex);
  return m_pending.size();
}

Bytes ExitProxy::pending_state_bytes() const
{
  std::lock_guard lock(m_mutex);
  Bytes out;
  for (const auto& [id, p] : m_pending) {
    append(out, id);
    append(out, p.session_key.bytes);
    for (const auto& hop : p.route)
      append(out, as_bytes(hop));
  }
  return out;
}

std::vector<Observation> ExitProxy::observations() const
{
  std::lock_guard lock(m_mutex);
  return m_observations;
}

ExitCounters ExitProxy::counters() const
{
  std::lock_guard lock(m_mutex);
  return m_counters;
}

} // namespace ocdn::exitproxy
