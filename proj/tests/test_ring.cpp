#include "doctest.h"

#include "ocdn/ring.hpp"
#include "support/fixtures.hpp"
#include "support/ring_oracle.hpp"

#include <map>
#include <set>

using namespace ocdn;
using namespace ocdn::ring;
using ocdn::testing::brute_force_owners;
using ocdn::testing::standard_placement;
using ocdn::testing::synthetic_member;
using ocdn::testing::test_keypair;

namespace {

RingPosition pos_with_top_byte(std::uint8_t b)
{
  RingPosition p;
  p.point[0] = b;
  return p;
}

std::vector<core::CanonicalUrl> random_urls(std::size_t n, std::uint64_t seed)
{
  SeededRandom rng(seed, "urls");
  std::vector<core::CanonicalUrl> urls;
  for (std::size_t i = 0; i < n; ++i)
    urls.push_back(core::CanonicalUrl::parse("http://site" + std::to_string(rng.uniform(50)) +
                                             ".example/" + to_hex(rng.bytes(6))));
  return urls;
}

std::vector<SelfCertifyingId> members(int n, int offset = 0)
{
  std::vector<SelfCertifyingId> out;
  for (int i = 0; i < n; ++i)
    out.push_back(synthetic_member(offset + i));
  return out;
}

} // namespace

TEST_SUITE("ring.ids")
{
  TEST_CASE("self-certifying id display round trip")
  {
    const auto& kp = test_keypair(0);
    auto id = SelfCertifyingId::for_key("192.0.2.7", kp.public_key());
    CHECK(SelfCertifyingId::parse(id.display()) == id);
    CHECK(id.display().starts_with("192.0.2.7:"));
    auto v6 = SelfCertifyingId::for_key("::1", kp.public_key());
    CHECK(SelfCertifyingId::parse(v6.display()) == v6);
    CHECK_THROWS_AS(SelfCertifyingId::parse("no-colon"), MalformedError);
    CHECK_THROWS_AS(SelfCertifyingId::parse("1.2.3.4:abcd"), MalformedError);
  }

  TEST_CASE("verify_member")
  {
    const auto& honest = test_keypair(0);
    const auto& attacker = test_keypair(1);
    auto id = SelfCertifyingId::for_key("10.0.0.1", honest.public_key());
    CHECK(verify_member(id, honest.public_key()));

    auto flipped = id;
    flipped.host_id[5] ^= 0x10;
    CHECK_FALSE(verify_member(flipped, honest.public_key()));

    CHECK_FALSE(verify_member(id, attacker.public_key()));
    CHECK_FALSE(verify_member(id, core::PublicKey{}));
  }

  TEST_CASE("random key substitution is always rejected")
  {
    std::vector<SelfCertifyingId> ids;
    for (int i = 0; i < 4; ++i)
      ids.push_back(SelfCertifyingId::for_key("10.0.0." + std::to_string(i),
                                              test_keypair(i).public_key()));
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k)
        CHECK(verify_member(ids[i], test_keypair(k).public_key()) == (i == k));
  }
}

TEST_SUITE("ring.positions")
{
  TEST_CASE("url positions are deterministic and encoding-specific")
  {
    auto url = core::CanonicalUrl::parse("http://a/x");
    CHECK(position_of_url(url, 0) == position_of_url(url, 0));
    CHECK(position_of_url(url, 0) != position_of_url(url, 1));
    CHECK(position_of_url(url, 0).point == core::sha256(as_bytes("http://a/x")));
  }

  TEST_CASE("positions spread across octants")
  {
    std::array<int, 8> octants{};
    for (const auto& url : random_urls(10000, 1))
      ++octants[position_of_url(url, 0).point[0] >> 5];
    for (int count : octants)
      CHECK(count <= 2000);
  }
}

TEST_SUITE("ring.owners")
{
  TEST_CASE("single member owns everything")
  {
    Ring ring({synthetic_member(0)}, 4);
    for (int b = 0; b < 256; b += 17)
      CHECK(ring.owners_of(pos_with_top_byte(static_cast<std::uint8_t>(b))) ==
            std::vector{synthetic_member(0)});
  }

  TEST_CASE("hand placed points match the brute-force scan")
  {
    auto a = synthetic_member(1), b = synthetic_member(2), c = synthetic_member(3);
    std::vector<std::pair<SelfCertifyingId, std::vector<RingPosition>>> placed{
      {a, {pos_with_top_byte(0x20)}},
      {b, {pos_with_top_byte(0x80)}},
      {c, {pos_with_top_byte(0xc0)}},
    };
    auto r1 = Ring::with_points(placed, 1);
    auto r2 = Ring::with_points(placed, 2);
    CHECK(r1.owners_of(pos_with_top_byte(0x10)) == std::vector{a});
    CHECK(r1.owners_of(pos_with_top_byte(0x20)) == std::vector{a}); // equal counts as follows
    CHECK(r1.owners_of(pos_with_top_byte(0x21)) == std::vector{b});
    CHECK(r1.owners_of(pos_with_top_byte(0xc1)) == std::vector{a}); // wraps
    CHECK(r2.owners_of(pos_with_top_byte(0x90)) == std::vector{c, a});

    for (int byte = 0; byte < 256; ++byte) {
      auto p = pos_with_top_byte(static_cast<std::uint8_t>(byte));
      p.point[31] = static_cast<std::uint8_t>(byte * 7);
      CHECK(r1.owners_of(p) == brute_force_owners(placed, p, 1));
      CHECK(r2.owners_of(p) == brute_force_owners(placed, p, 2));
    }
  }

  TEST_CASE("computed rings agree with the brute-force oracle")
  {
    auto ms = members(5);
    auto placed = standard_placement(ms, 8);
    Ring r1(ms, 8, 1);
    Ring r3(ms, 8, 3);
    for (const auto& url : random_urls(300, 2)) {
      auto p = position_of_url(url, 0);
      CHECK(r1.owners_of(p) == brute_force_owners(placed, p, 1));
      CHECK(r3.owners_of(p) == brute_force_owners(placed, p, 3));
    }
  }

  TEST_CASE("replicas are distinct")
  {
    Ring ring(members(3), 16, 2);
    for (const auto& url : random_urls(200, 3)) {
      auto owners = ring.owners_of(position_of_url(url, 0));
      REQUIRE(owners.size() == 2);
      CHECK(owners[0] != owners[1]);
    }
  }

  TEST_CASE("insufficient members")
  {
    Ring ring(members(2), 4, 3);
    CHECK_THROWS_AS(ring.owners_of(pos_with_top_byte(1)), InsufficientMembers);
    CHECK_THROWS_AS(Ring().owners_of(pos_with_top_byte(1), 1), InsufficientMembers);
  }

  TEST_CASE("ownership depends only on the member set")
  {
    auto ms = members(6);
    auto shuffled = ms;
    std::reverse(shuffled.begin(), shuffled.end());
    Ring a(ms, 16, 2), b(shuffled, 16, 2);
    for (const auto& url : random_urls(200, 4)) {
      auto p = position_of_url(url, 0);
      CHECK(a.owners_of(p) == b.owners_of(p));
    }
  }
}

TEST_SUITE("ring.balance")
{
  TEST_CASE("load balance and movement with 10 members")
  {
    auto ms = members(10);
    Ring ring(ms, 64, 1);
    auto urls = random_urls(10000, 5);
    std::vector<RingPosition> sample;
    for (const auto& u : urls)
      sample.push_back(position_of_url(u, 0));

    std::map<SelfCertifyingId, int> load;
    for (const auto& p : sample)
      ++load[ring.owners_of(p)[0]];
    int max_load = 0;
    for (const auto& [id, n] : load)
      max_load = std::max(max_load, n);
    double mean = 10000.0 / 10;
    CHECK(max_load / mean <= 2.0);

    auto newcomer = synthetic_member(99);
    Ring grown = ring.with_member(newcomer);
    auto moved = diff_on_change(ring, grown, sample);
    double fraction = static_cast<double>(moved.size()) / sample.size();
    CHECK(fraction >= 0.3 / 11);
    CHECK(fraction <= 2.0 / 11);
    // monotonicity: every moved position now belongs to the newcomer
    for (const auto& p : moved)
      CHECK(grown.owners_of(p)[0] == newcomer);

    // full recomputation oracle
    std::size_t recomputed = 0;
    for (const auto& p : sample)
      recomputed += ring.owners_of(p) != grown.owners_of(p);
    CHECK(recomputed == moved.size());

    auto back = diff_on_change(grown, grown.without_member(newcomer), sample);
    CHECK(back == moved);
  }

  TEST_CASE("1000 URLs: one added member moves a band-limited share")
  {
    Ring ring(members(10), 64, 1);
    std::vector<RingPosition> sample;
    for (const auto& u : random_urls(1000, 6))
      sample.push_back(position_of_url(u, 0));
    auto moved = diff_on_change(ring, ring.with_member(synthetic_member(50)), sample);
    CHECK(moved.size() >= 30);
    CHECK(moved.size() <= 200);
    CHECK(diff_on_change(ring, ring, sample).empty());
  }
}

TEST_SUITE("ring.roster")
{
  TEST_CASE("signed roster round trip")
  {
    const auto& authority = test_keypair(0);
    Roster roster;
    for (int i = 1; i <= 3; ++i) {
      const auto& kp = test_keypair(i);
      roster.upsert({SelfCertifyingId::for_key("127.0.0.1", kp.public_key()),
                     "127.0.0.1:" + std::to_string(9000 + i), kp.public_key()});
    }
    std::string doc = roster.sign(authority);
    auto parsed = Roster::parse(doc, &authority.public_key());
    CHECK(parsed.version == 3);
    REQUIRE(parsed.entries.size() == 3);
    CHECK(parsed.entries[1].address == "127.0.0.1:9002");
    CHECK(parsed.find_address("127.0.0.1:9003") != nullptr);
    CHECK(parsed.ring(4).members().size() == 3);
    CHECK(parsed.sign(authority) == doc);

    // untrusted authority
    CHECK_THROWS_AS(Roster::parse(doc, &test_keypair(4).public_key()), MalformedError);

    // tampered address
    auto tampered = doc;
    tampered.replace(tampered.find("127.0.0.1:9002"), 14, "127.0.0.1:9999");
    CHECK_THROWS_AS(Roster::parse(tampered), MalformedError);
  }

  TEST_CASE("members that fail self-certification are rejected")
  {
    const auto& authority = test_keypair(0);
    Roster roster;
    // id derived from key 1 but advertised with key 2
    roster.entries.push_back({SelfCertifyingId::for_key("10.0.0.1", test_keypair(1).public_key()),
                              "10.0.0.1:1", test_keypair(2).public_key()});
    CHECK_THROWS_AS(Roster::parse(roster.sign(authority)), MalformedError);
  }
}
