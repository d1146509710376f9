#include "doctest.h"

#include "ocdn/keydist.hpp"
#include "support/fixtures.hpp"
#include "support/ring_oracle.hpp"

#include <thread>

using namespace ocdn;
using namespace ocdn::keydist;
using ocdn::testing::test_keypair;

namespace {

/// Fixed key table with optional lazy rotation on expiry.
class TableSource final : public KeySource
{
public:
  TableSource(const Clock& clock, std::uint32_t encodings = 1)
    : m_clock(clock)
    , m_rng(11, "table-source")
    , m_encodings(encodings)
  {
  }

  void publish(const std::string& url) { m_urls.push_back(url); }

  std::optional<KeyGrant> lookup(const core::CanonicalUrl& url) override
  {
    std::lock_guard lock(m_mutex);
    if (std::find(m_urls.begin(), m_urls.end(), url.text()) == m_urls.end())
      return std::nullopt;
    std::int64_t now = m_clock.now_seconds();
    if (!m_key || m_key->expired_at(now))
      m_key = core::SharedKey::generate(m_rng, now, 600);
    return KeyGrant{url.origin(), *m_key, m_encodings};
  }

  core::SharedKey current() const { return *m_key; }

private:
  const Clock& m_clock;
  SeededRandom m_rng;
  std::uint32_t m_encodings;
  std::mutex m_mutex;
  std::vector<std::string> m_urls;
  std::optional<core::SharedKey> m_key;
};

struct Proxy
{
  const core::KeyPair* keys;
  ring::SelfCertifyingId id;
};

Proxy proxy(int i)
{
  const auto& kp = test_keypair(i);
  return {&kp, ring::SelfCertifyingId::for_key("10.9.0." + std::to_string(i), kp.public_key())};
}

ring::Ring ring_of(const std::vector<Proxy>& proxies, unsigned v = 64)
{
  std::vector<ring::SelfCertifyingId> ids;
  for (const auto& p : proxies)
    ids.push_back(p.id);
  return ring::Ring(ids, v);
}

} // namespace

TEST_SUITE("keydist.wire")
{
  TEST_CASE("query and answer lines round trip")
  {
    auto p = proxy(0);
    KeyQuery q{core::CanonicalUrl::parse("http://a.example/x"), p.id, p.keys->public_key()};
    auto back = KeyQuery::from_line(q.to_line());
    CHECK(back.url == q.url);
    CHECK(back.proxy_id == q.proxy_id);
    CHECK(back.proxy_pub == q.proxy_pub);

    KeyRecord rec{"http://a.example", Bytes(256, 7), {1, 2, 3, 4, 5, 6, 7, 8}, 1234, 4};
    auto parsed = std::get<KeyRecord>(answer_from_line(answer_to_line(rec)));
    CHECK(parsed.sealed_key == rec.sealed_key);
    CHECK(parsed.key_id == rec.key_id);
    CHECK(parsed.expires_at == 1234);
    CHECK(parsed.encodings == 4);

    CHECK(std::get<RefusalCode>(answer_from_line(answer_to_line(RefusalCode::NotOwner))) ==
          RefusalCode::NotOwner);
    CHECK_THROWS_AS(answer_from_line("garbage"), MalformedError);
  }
}

TEST_SUITE("keydist.authority")
{
  TEST_CASE("owner receives a key it can open")
  {
    ManualClock clock;
    TableSource source(clock);
    source.publish("http://a.example/x");
    auto p = proxy(0);
    KeyAuthority auth(source, ring_of({p}));
    auto answer = auth.answer_key_query({core::CanonicalUrl::parse("http://a.example/x"), p.id,
                                         p.keys->public_key()});
    auto rec = std::get<KeyRecord>(answer);
    CHECK(rec.sealed_key.size() == core::kRsaSealedBytes);
    Bytes raw = core::rsa_open(*p.keys, rec.sealed_key);
    CHECK(std::equal(raw.begin(), raw.end(), source.current().bytes().begin()));
    CHECK(rec.key_id == source.current().key_id());
    CHECK(rec.expires_at == source.current().expires_at());
  }

  TEST_CASE("claimed id of another proxy is BAD_ID")
  {
    ManualClock clock;
    TableSource source(clock);
    source.publish("http://a.example/x");
    auto honest = proxy(0);
    auto liar = proxy(1);
    KeyAuthority auth(source, ring_of({honest}));
    auto answer = auth.answer_key_query(
      {core::CanonicalUrl::parse("http://a.example/x"), honest.id, liar.keys->public_key()});
    CHECK(std::get<RefusalCode>(answer) == RefusalCode::BadId);
  }

  TEST_CASE("unknown url is UNKNOWN; bad id checked first")
  {
    ManualClock clock;
    TableSource source(clock);
    auto p = proxy(0);
    KeyAuthority auth(source, ring_of({p}));
    auto url = core::CanonicalUrl::parse("http://nowhere.example/");
    CHECK(std::get<RefusalCode>(auth.answer_key_query({url, p.id, p.keys->public_key()})) ==
          RefusalCode::Unknown);
    CHECK(std::get<RefusalCode>(auth.answer_key_query({url, p.id, test_keypair(1).public_key()})) ==
          RefusalCode::BadId);
  }

  TEST_CASE("non-owner is refused, matching the brute-force owner")
  {
    ManualClock clock;
    TableSource source(clock);
    std::vector<Proxy> proxies{proxy(0), proxy(1), proxy(2)};
    auto r = ring_of(proxies, 1);
    std::vector<ring::SelfCertifyingId> ids;
    for (const auto& p : proxies)
      ids.push_back(p.id);
    auto placed = ocdn::testing::standard_placement(ids, 1);
    KeyAuthority auth(source, r);
    for (int u = 0; u < 12; ++u) {
      std::string text = "http://s.example/" + std::to_string(u);
      source.publish(text);
      auto url = core::CanonicalUrl::parse(text);
      auto owner = ocdn::testing::brute_force_owners(placed, ring::position_of_url(url, 0), 1)[0];
      for (const auto& p : proxies) {
        auto answer = auth.answer_key_query({url, p.id, p.keys->public_key()});
        if (p.id == owner)
          CHECK(std::holds_alternative<KeyRecord>(answer));
        else
          CHECK(std::get<RefusalCode>(answer) == RefusalCode::NotOwner);
      }
    }
  }

  TEST_CASE("malformed lines answer MALFORMED")
  {
    ManualClock clock;
    TableSource source(clock);
    KeyAuthority auth(source, ring_of({proxy(0)}));
    auto answer = answer_from_line(auth.handle_line("{\"qname\": 3}"));
    CHECK(std::get<RefusalCode>(answer) == RefusalCode::Malformed);
    answer = answer_from_line(auth.handle_line("not json"));
    CHECK(std::get<RefusalCode>(answer) == RefusalCode::Malformed);
  }

  TEST_CASE("wire never carries the key bytes in the clear")
  {
    ManualClock clock;
    TableSource source(clock);
    source.publish("http://a.example/x");
    auto p = proxy(0);
    KeyAuthority auth(source, ring_of({p}));
    auto channel = std::make_shared<LocalKeyChannel>(auth);
    OriginDirectory dir;
    dir.add("http://a.example", channel);
    KeyFetcher fetcher(*p.keys, p.id, dir, clock);
    auto got = fetcher.fetch_key(core::CanonicalUrl::parse("http://a.example/x"));
    const auto& key = got.key.bytes();
    std::string hex = to_hex(key);
    std::string b64 = to_base64(key);
    for (const auto& line : channel->wire()) {
      CHECK_FALSE(contains(as_bytes(line), key));
      CHECK(line.find(hex) == std::string::npos);
      CHECK(line.find(b64) == std::string::npos);
    }
  }
}

TEST_SUITE("keydist.fetcher")
{
  struct Stack
  {
    ManualClock clock;
    TableSource source{clock};
    Proxy p = proxy(0);
    KeyAuthority auth{source, ring_of({p})};
    std::shared_ptr<LocalKeyChannel> channel = std::make_shared<LocalKeyChannel>(auth);
    OriginDirectory dir;
    core::CanonicalUrl url = core::CanonicalUrl::parse("http://a.example/x");

    Stack()
    {
      source.publish(url.text());
      dir.add("http://a.example", channel);
    }
  };

  TEST_CASE("cache hit makes no round trip")
  {
    Stack s;
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock);
    auto k1 = f.fetch_key(s.url);
    s.clock.advance_ms(10'000);
    auto k2 = f.fetch_key(s.url);
    CHECK(s.channel->round_trips() == 1);
    CHECK(k1.key.key_id() == k2.key.key_id());
    CHECK(k1.cache_until <= k1.key.expires_at());
  }

  TEST_CASE("cache ttl forces a refresh")
  {
    Stack s;
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock, 300);
    auto k1 = f.fetch_key(s.url);
    s.clock.advance_ms(301'000);
    auto k2 = f.fetch_key(s.url);
    CHECK(s.channel->round_trips() == 2);
    CHECK(k1.key.key_id() == k2.key.key_id()); // key itself still valid
  }

  TEST_CASE("fetch after expiry gets a new key")
  {
    Stack s;
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock, 10'000);
    auto k1 = f.fetch_key(s.url);
    // Just before expiry the cached key is still served.
    s.clock.set_ms((k1.key.expires_at() - 1) * 1000);
    CHECK(f.fetch_key(s.url).key.key_id() == k1.key.key_id());
    CHECK(s.channel->round_trips() == 1);
    // At expiry it must not be.
    s.clock.set_ms(k1.key.expires_at() * 1000);
    auto k2 = f.fetch_key(s.url);
    CHECK(s.channel->round_trips() == 2);
    CHECK(k2.key.key_id() != k1.key.key_id());
    CHECK(k2.key.expires_at() > s.clock.now_seconds());
  }

  TEST_CASE("refusal surfaces and is not cached")
  {
    Stack s;
    auto outsider = proxy(3);
    KeyFetcher f(*outsider.keys, outsider.id, s.dir, s.clock);
    try {
      f.fetch_key(s.url);
      FAIL("expected refusal");
    }
    catch (const KeyRefused& e) {
      CHECK(e.code() == RefusalCode::NotOwner);
    }
    CHECK_THROWS_AS(f.fetch_key(s.url), KeyRefused);
    CHECK(s.channel->round_trips() == 2);
  }

  TEST_CASE("transport failure propagates")
  {
    Stack s;
    s.channel->set_failing(true);
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock);
    CHECK_THROWS_AS(f.fetch_key(s.url), TransportError);
    s.channel->set_failing(false);
    CHECK_NOTHROW(f.fetch_key(s.url));
  }

  TEST_CASE("no directory entry is UNKNOWN")
  {
    Stack s;
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock);
    CHECK_THROWS_AS(f.fetch_key(core::CanonicalUrl::parse("http://other.example/")), KeyRefused);
    CHECK(s.channel->round_trips() == 0);
  }

  TEST_CASE("concurrent fetches for one url coalesce")
  {
    Stack s;
    KeyFetcher f(*s.p.keys, s.p.id, s.dir, s.clock);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i)
      threads.emplace_back([&] { f.fetch_key(s.url); });
    for (auto& t : threads)
      t.join();
    CHECK(s.channel->round_trips() == 1);
  }
}
