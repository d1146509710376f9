#include "doctest.h"

#include "ocdn/cachenode.hpp"
#include "support/fixtures.hpp"

using namespace ocdn;
using namespace ocdn::cache;
using ocdn::testing::test_keypair;
using ocdn::testing::test_shared_key;

namespace {

struct Signed
{
  core::ObfuscatedId id;
  core::ContentEnvelope env;
  Bytes sig;
};

Signed make_object(const core::KeyPair& origin, std::string_view url, ByteView body,
                   std::uint64_t seed = 1)
{
  SeededRandom rng(seed, "cachenode-test");
  auto key = test_shared_key(7);
  auto cu = core::CanonicalUrl::parse(url);
  Signed s;
  s.id = core::derive_obfuscated_id(key, cu, 0);
  s.env = core::seal_content(key, body, rng);
  s.sig = core::sign_update(origin, s.id, s.env);
  return s;
}

} // namespace

TEST_SUITE("cachenode")
{
  TEST_CASE("put then get returns identical bytes")
  {
    ManualClock clock;
    CacheNode node(clock);
    const auto& origin = test_keypair(0);
    auto obj = make_object(origin, "http://a.example/x", as_bytes("hello"));

    CHECK(node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "origin") ==
          net::PutStatus::Stored);
    auto back = node.get_object(obj.id, "exit");
    REQUIRE(back);
    CHECK(*back == obj.env.serialize());
    CHECK(node.size() == 1);
  }

  TEST_CASE("unknown id is not found")
  {
    ManualClock clock;
    CacheNode node(clock);
    core::ObfuscatedId id;
    id.bytes.fill(0x42);
    CHECK_FALSE(node.get_object(id, "exit"));
    CHECK(node.dump_log().size() == 1);
  }

  TEST_CASE("re-put of identical entry is idempotent")
  {
    ManualClock clock;
    CacheNode node(clock);
    const auto& origin = test_keypair(0);
    auto obj = make_object(origin, "http://a.example/x", as_bytes("hello"));
    REQUIRE(node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "o") ==
            net::PutStatus::Stored);
    CHECK(node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "o") ==
          net::PutStatus::Unchanged);
    CHECK(node.size() == 1);
  }

  TEST_CASE("update from a different origin is rejected")
  {
    ManualClock clock;
    CacheNode node(clock);
    const auto& origin = test_keypair(0);
    const auto& other = test_keypair(1);
    auto obj = make_object(origin, "http://a.example/x", as_bytes("v1"));
    REQUIRE(node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "o") ==
            net::PutStatus::Stored);

    auto forged = make_object(other, "http://a.example/x", as_bytes("evil"), 2);
    REQUIRE(forged.id == obj.id);
    CHECK(node.put_object(forged.id, forged.env, other.public_key(), forged.sig, "attacker") ==
          net::PutStatus::OriginMismatch);
    CHECK(*node.get_object(obj.id, "exit") == obj.env.serialize());

    // Same origin may update.
    auto v2 = make_object(origin, "http://a.example/x", as_bytes("v2"), 3);
    CHECK(node.put_object(v2.id, v2.env, origin.public_key(), v2.sig, "o") ==
          net::PutStatus::Stored);
    CHECK(*node.get_object(obj.id, "exit") == v2.env.serialize());
  }

  TEST_CASE("bad or missing signature is rejected")
  {
    ManualClock clock;
    CacheNode node(clock);
    const auto& origin = test_keypair(0);
    auto obj = make_object(origin, "http://a.example/x", as_bytes("hello"));
    Bytes bad = obj.sig;
    bad[10] ^= 1;
    CHECK(node.put_object(obj.id, obj.env, origin.public_key(), bad, "o") ==
          net::PutStatus::BadSignature);
    CHECK(node.put_object(obj.id, obj.env, origin.public_key(), Bytes{}, "o") ==
          net::PutStatus::BadSignature);
    // Signature by someone else while claiming the origin key.
    auto other_sig = core::sign_update(test_keypair(1), obj.id, obj.env);
    CHECK(node.put_object(obj.id, obj.env, origin.public_key(), other_sig, "o") ==
          net::PutStatus::BadSignature);
    CHECK(node.size() == 0);
  }

  TEST_CASE("strict allowlist refuses unknown origins on first write")
  {
    ManualClock clock;
    CacheNodeConfig cfg;
    cfg.strict_allowlist = true;
    cfg.trusted_origins = {test_keypair(0).public_key()};
    CacheNode node(clock, cfg);

    auto good = make_object(test_keypair(0), "http://a.example/x", as_bytes("ok"));
    auto stranger = make_object(test_keypair(1), "http://b.example/y", as_bytes("no"));
    CHECK(node.put_object(good.id, good.env, test_keypair(0).public_key(), good.sig, "o") ==
          net::PutStatus::Stored);
    CHECK(node.put_object(stranger.id, stranger.env, test_keypair(1).public_key(), stranger.sig,
                          "o") == net::PutStatus::Untrusted);
  }

  TEST_CASE("log has one record per request")
  {
    ManualClock clock;
    CacheNode node(clock);
    CHECK(node.dump_log().empty());

    const auto& origin = test_keypair(0);
    auto obj = make_object(origin, "http://a.example/x", as_bytes("hello"));
    node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "origin");
    for (int i = 0; i < 1000; ++i) {
      clock.advance_ms(1);
      node.get_object(obj.id, "exit-1");
    }
    auto log = node.dump_log();
    REQUIRE(log.size() == 1001);
    CHECK(log[0].verb == "PUT");
    std::size_t gets = 0;
    for (std::size_t i = 1; i < log.size(); ++i) {
      gets += log[i].verb == "GET" && log[i].id == obj.id.hex() && log[i].peer == "exit-1";
      CHECK(log[i].time_ms > log[i - 1].time_ms);
    }
    CHECK(gets == 1000);
    CHECK(node.gets() == 1000);
  }

  TEST_CASE("log record json round trip")
  {
    AccessLogRecord r{1234, "10.0.0.1:80", "GET", "ab"};
    CHECK(AccessLogRecord::from_json(r.to_json()) == r);
    CHECK_THROWS_AS(AccessLogRecord::from_json("{"), MalformedError);
  }

  TEST_CASE("stored bytes and log never contain URL or content sentinel")
  {
    ManualClock clock;
    CacheNode node(clock);
    const auto& origin = test_keypair(0);
    SeededRandom rng(99, "sentinel");
    std::vector<std::string> urls;
    std::vector<Bytes> sentinels;
    for (int i = 0; i < 20; ++i) {
      urls.push_back("http://secret" + std::to_string(i) + ".example/page/" + to_hex(rng.bytes(4)));
      Bytes sentinel = rng.bytes(32);
      Bytes body = rng.bytes(100 + 500 * i);
      body.insert(body.begin() + body.size() / 2, sentinel.begin(), sentinel.end());
      sentinels.push_back(sentinel);
      auto obj = make_object(origin, urls.back(), body, 100 + i);
      node.put_object(obj.id, obj.env, origin.public_key(), obj.sig, "origin");
      node.get_object(obj.id, "exit");
    }
    Bytes view = node.stored_bytes();
    for (const auto& rec : node.dump_log())
      append(view, as_bytes(rec.to_json()));
    for (const auto& u : urls)
      CHECK_FALSE(contains(view, as_bytes(u)));
    for (const auto& s : sentinels)
      CHECK_FALSE(contains(view, s));
  }

  TEST_CASE("LRU eviction by bytes")
  {
    ManualClock clock;
    const auto& origin = test_keypair(0);
    auto a = make_object(origin, "http://a.example/1", Bytes(100), 1);
    std::uint64_t one = a.env.wire_size();
    CacheNodeConfig cfg;
    cfg.capacity_bytes = 2 * one;
    CacheNode node(clock, cfg);
    auto b = make_object(origin, "http://a.example/2", Bytes(100), 2);
    auto c = make_object(origin, "http://a.example/3", Bytes(100), 3);
    node.put_object(a.id, a.env, origin.public_key(), a.sig, "o");
    node.put_object(b.id, b.env, origin.public_key(), b.sig, "o");
    node.get_object(a.id, "exit"); // a becomes most recent
    node.put_object(c.id, c.env, origin.public_key(), c.sig, "o");
    CHECK(node.size() == 2);
    CHECK(node.get_object(a.id, "exit"));
    CHECK_FALSE(node.get_object(b.id, "exit"));
    CHECK(node.get_object(c.id, "exit"));
    CHECK(node.stored_size() == 2 * one);
  }

  TEST_CASE("plaintext store and endpoint binding")
  {
    ManualClock clock;
    CacheNode node(clock);
    LocalCacheEndpoint ep(node, "cache-1", "10.1.1.1");
    ep.put_plain("/index.html", as_bytes("<html>"));
    CHECK(to_string(*ep.get_plain("/index.html")) == "<html>");
    CHECK_FALSE(ep.get_plain("/missing"));
    auto log = node.dump_log();
    REQUIRE(log.size() == 3);
    CHECK(log[0].peer == "10.1.1.1");
    CHECK(log[1].id == "plain:/index.html");
  }
}
