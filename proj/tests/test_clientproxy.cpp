#include "doctest.h"

#include "support/local_stack.hpp"
#include "support/ring_oracle.hpp"

#include <set>

using namespace ocdn;
using namespace ocdn::client;
using ocdn::testing::LocalStack;
using ocdn::testing::StackOptions;

namespace {

core::CanonicalUrl url(std::string_view s)
{
  return core::CanonicalUrl::parse(s);
}

std::vector<net::LocalNetwork::Transmission> relays(net::LocalNetwork& network)
{
  std::vector<net::LocalNetwork::Transmission> out;
  for (auto& t : network.take_wire_log())
    if (t.kind == net::LocalNetwork::Kind::Relay)
      out.push_back(std::move(t));
  return out;
}

} // namespace

TEST_SUITE("clientproxy.modes")
{
  TEST_CASE("mode text")
  {
    CHECK(Mode::parse("direct") == Mode::direct());
    CHECK(Mode::parse("routed:2") == Mode::routed(2));
    CHECK(Mode::parse("spoofed_direct:3") == Mode::spoofed_direct(3));
    CHECK(Mode::routed(4).to_string() == "routed:4");
    CHECK_THROWS_AS(Mode::parse("routed"), MalformedError);
    CHECK_THROWS_AS(Mode::parse("routed:x"), MalformedError);
    CHECK_THROWS_AS(Mode::parse("onion:2"), MalformedError);
  }

  TEST_CASE("direct mode is one hop to the exit")
  {
    LocalStack s;
    auto u = url("http://m.example/direct");
    s.publish(u, Bytes(100, 1));
    s.network.record_wire(true);
    auto r = s.clients[0]->fetch(u, Mode::direct());
    CHECK(r.ok());
    auto rs = relays(s.network);
    REQUIRE(rs.size() == 1);
    auto msg = net::RelayMessage::parse(rs[0].wire);
    CHECK(msg.route == std::vector<std::string>{s.client_addresses[0], s.directory->lookup(u).address});
    CHECK(rs[0].from == s.client_addresses[0]);
    CHECK(rs[0].to == msg.route.back());
  }

  TEST_CASE("routed(2) visits two peers before the exit, unchanged at every hop")
  {
    LocalStack s;
    auto u = url("http://m.example/routed");
    s.publish(u, Bytes(100, 2));
    s.network.record_wire(true);
    CHECK(s.clients[0]->fetch(u, Mode::routed(2)).ok());
    auto rs = relays(s.network);
    REQUIRE(rs.size() == 3);
    auto route = net::RelayMessage::parse(rs[0].wire).route;
    REQUIRE(route.size() == 4);
    CHECK(route.front() == s.client_addresses[0]);
    CHECK(std::set<std::string>(route.begin(), route.end()).size() == 4);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      CHECK(rs[i].wire == rs[0].wire);
      CHECK(rs[i].from == route[i]);
      CHECK(rs[i].to == route[i + 1]);
    }
    // Forwarding peers hold nothing.
    for (std::size_t c = 1; c < s.clients.size(); ++c)
      CHECK(s.clients[c]->pending_size() == 0);
  }

  TEST_CASE("spoofed_direct(2) goes straight to the exit with three candidate originators")
  {
    StackOptions opt;
    opt.record_observations = true;
    LocalStack s(opt);
    auto u = url("http://m.example/spoof");
    s.publish(u, Bytes(100, 3));
    s.network.record_wire(true);
    CHECK(s.clients[2]->fetch(u, Mode::spoofed_direct(2)).ok());
    auto rs = relays(s.network);
    REQUIRE(rs.size() == 1);
    auto route = net::RelayMessage::parse(rs[0].wire).route;
    REQUIRE(route.size() == 4);
    CHECK(route[2] == s.client_addresses[2]);
    CHECK(rs[0].to == route[3]);

    auto obs = s.exit_at(route[3]).observations();
    REQUIRE(obs.size() == 1);
    std::set<std::string> candidates(obs[0].route.begin(), obs[0].route.end() - 1);
    CHECK(candidates.size() == 3);
    CHECK(candidates.contains(s.client_addresses[2]));
  }

  TEST_CASE("spoofed and routed messages have the same shape")
  {
    LocalStack s;
    auto u = url("http://m.example/shape");
    auto spoofed = s.clients[0]->build_request(u, Mode::spoofed_direct(2)).message;
    auto routed = s.clients[1]->build_request(u, Mode::routed(2)).message;
    CHECK(spoofed.route.size() == routed.route.size());
    CHECK(spoofed.sealed_session_key.size() == routed.sealed_session_key.size());
    CHECK(spoofed.encrypted_url.size() == routed.encrypted_url.size());
    // Same header set, nothing else on the wire.
    auto header_names = [](const Bytes& wire) {
      std::string text = to_string(wire);
      std::set<std::string> names;
      std::size_t pos = text.find('\n') + 1;
      for (;;) {
        auto nl = text.find('\n', pos);
        if (nl == pos)
          break;
        names.insert(text.substr(pos, text.find(':', pos) - pos));
        pos = nl + 1;
      }
      return names;
    };
    CHECK(header_names(spoofed.serialize()) == header_names(routed.serialize()));
    CHECK(header_names(spoofed.serialize()) ==
          std::set<std::string>{"X-OCDN", "X-OCDN-Route", "X-OCDN-Req"});
  }

  TEST_CASE("every route ends at the ring owner")
  {
    LocalStack s;
    std::vector<ring::SelfCertifyingId> ids;
    for (const auto& e : s.roster.entries)
      ids.push_back(e.id);
    auto placed = ocdn::testing::standard_placement(ids, 64);
    for (int i = 0; i < 30; ++i) {
      auto u = url("http://owners.example/" + std::to_string(i));
      auto owner = ocdn::testing::brute_force_owners(placed, ring::position_of_url(u, 0), 1)[0];
      for (auto mode : {Mode::direct(), Mode::routed(2), Mode::spoofed_direct(2)}) {
        auto built = s.clients[0]->build_request(u, mode);
        CHECK(built.message.route.back() == s.roster.find(owner)->address);
        CHECK(built.exit.id == owner);
      }
    }
  }

  TEST_CASE("not enough peers")
  {
    LocalStack s;
    auto u = url("http://m.example/x");
    CHECK_THROWS_AS(s.clients[0]->build_request(u, Mode::routed(6)), InsufficientPeers);
    CHECK_THROWS_AS(s.clients[0]->build_request(u, Mode::spoofed_direct(6)), InsufficientPeers);
    CHECK_NOTHROW(s.clients[0]->build_request(u, Mode::routed(5)));
  }
}

TEST_SUITE("clientproxy.forward")
{
  TEST_CASE("forward is the identity on message bytes")
  {
    LocalStack s;
    auto built = s.clients[0]->build_request(url("http://m.example/f"), Mode::routed(2));
    const auto& middle = built.message.route[1];
    std::size_t mi = 0;
    while (s.client_addresses[mi] != middle)
      ++mi;
    Bytes seen;
    s.network.set_observer([&](const net::LocalNetwork::Transmission& t) {
      if (t.kind == net::LocalNetwork::Kind::Relay && seen.empty())
        seen = t.wire;
    });
    CHECK(s.clients[mi]->forward(built.message));
    CHECK(seen == built.message.serialize());
    CHECK(s.clients[mi]->pending_size() == 0);
  }

  TEST_CASE("client never acts as a terminal hop")
  {
    LocalStack s;
    auto built = s.clients[0]->build_request(url("http://m.example/g"), Mode::direct());
    auto msg = built.message;
    msg.route = {s.client_addresses[0], s.client_addresses[1]};
    auto before = s.network.transmissions();
    CHECK_FALSE(s.clients[1]->forward(msg));
    CHECK_FALSE(s.clients[3]->forward(msg)); // not on the route at all
    CHECK(s.network.transmissions() == before);
    CHECK(s.clients[1]->counters().dropped == 1);
  }
}

TEST_SUITE("clientproxy.delivery")
{
  TEST_CASE("exactly one route member can read the response")
  {
    LocalStack s;
    auto u = url("http://m.example/secret");
    s.publish(u, Bytes(999, 4));
    auto r = s.clients[3]->fetch(u, Mode::routed(3));
    CHECK(r.ok());
    std::uint64_t accepted = 0, discarded = 0;
    for (const auto& c : s.clients) {
      accepted += c->counters().accepted;
      discarded += c->counters().discarded;
    }
    CHECK(accepted == 1);
    CHECK(discarded == 3);
    CHECK(s.clients[3]->counters().accepted == 1);
  }

  TEST_CASE("discard is silent and replays are ignored")
  {
    LocalStack s;
    auto u = url("http://m.example/replay");
    s.publish(u, Bytes(10, 4));
    s.network.record_wire(true);
    CHECK(s.clients[0]->fetch(u, Mode::spoofed_direct(2)).ok());
    net::DeliverMessage delivered;
    for (const auto& t : s.network.take_wire_log())
      if (t.kind == net::LocalNetwork::Kind::Deliver && t.to == s.client_addresses[0])
        delivered = net::DeliverMessage::parse(t.wire);

    auto before = s.network.transmissions();
    CHECK_FALSE(s.clients[0]->accept_delivery(delivered));
    CHECK_FALSE(s.clients[1]->accept_delivery(delivered));
    CHECK(s.network.transmissions() == before);
    CHECK(s.clients[0]->pending_size() == 0);
  }
}

TEST_SUITE("clientproxy.directory")
{
  TEST_CASE("stale roster is refreshed once on NOT_OWNER")
  {
    LocalStack s;
    auto u = url("http://m.example/stale");
    s.publish(u, Bytes(50, 6));
    auto old_owner = s.directory->lookup(u);

    ring::Roster updated = s.roster;
    std::erase_if(updated.entries, [&](const auto& e) { return e.id == old_owner.id; });
    updated.version = 2;
    s.authority->set_ring(updated.ring(64));

    int refreshes = 0;
    s.clients[0]->set_roster_refresh([&]() -> std::optional<ring::Roster> {
      ++refreshes;
      return updated;
    });
    auto r = s.clients[0]->fetch(u, Mode::direct());
    CHECK(r.ok());
    CHECK(r.body == Bytes(50, 6));
    CHECK(refreshes == 1);
    CHECK(s.directory->version() == 2);
    CHECK(s.directory->lookup(u).address != old_owner.address);
  }

  TEST_CASE("older roster does not replace a newer one")
  {
    LocalStack s;
    ring::Roster older = s.roster;
    older.version = 0;
    CHECK_FALSE(s.directory->update(older));
    CHECK(s.directory->version() == 1);
  }
}

TEST_SUITE("clientproxy.membership")
{
  struct Peers
  {
    ManualClock clock;
    std::vector<core::PeerIdentity> ids;

    Peers()
    {
      for (int i = 0; i < 6; ++i) {
        SeededRandom rng(500 + i, "peer");
        ids.push_back(core::PeerIdentity::generate(rng));
      }
    }

    Announcement join(int i, std::int64_t dt = 0)
    {
      return Announcement::make(ids[i], "p" + std::to_string(i), clock.now_ms() + dt, false);
    }
    Announcement leave(int i, std::int64_t dt = 0)
    {
      return Announcement::make(ids[i], "p" + std::to_string(i), clock.now_ms() + dt, true);
    }
  };

  TEST_CASE("join, then leave")
  {
    Peers p;
    PeerTable t("p0", p.clock);
    CHECK(t.apply(p.join(0)));
    CHECK(t.apply(p.join(1)));
    CHECK(t.contains("p1"));
    CHECK_FALSE(t.contains("p0")); // self is never a peer
    CHECK(t.apply(p.leave(1, 5)));
    CHECK_FALSE(t.contains("p1"));
    // An older join cannot resurrect the peer.
    CHECK_FALSE(t.apply(p.join(1, 2)));
    CHECK_FALSE(t.contains("p1"));
  }

  TEST_CASE("forged or malformed announcements are ignored")
  {
    Peers p;
    PeerTable t("p0", p.clock);
    auto a = p.join(1);
    a.timestamp_ms += 1;
    CHECK_FALSE(t.apply(a));
    auto b = p.join(1);
    b.address = "p9";
    CHECK_FALSE(t.apply(b));
    CHECK(t.apply(p.join(1)));
    // Another key claiming p1 later.
    auto hijack = Announcement::make(p.ids[2], "p1", p.clock.now_ms() + 10, true);
    CHECK_FALSE(t.apply(hijack));
    CHECK(t.contains("p1"));
    CHECK_THROWS_AS(Announcement::from_line("announce p1 xx"), MalformedError);
    auto line = p.join(3).to_line();
    CHECK(Announcement::from_line(line) == p.join(3));
  }

  TEST_CASE("inactive peers are pruned")
  {
    Peers p;
    PeerTable t("p0", p.clock, 60'000);
    t.apply(p.join(1));
    p.clock.advance_ms(30'000);
    t.apply(p.join(2));
    p.clock.advance_ms(40'000);
    CHECK_FALSE(t.contains("p1"));
    CHECK(t.contains("p2"));
    t.prune();
    CHECK(t.snapshot().size() == 1);
  }

  TEST_CASE("two tables exchanging snapshots converge to the newest-wins union")
  {
    Peers p;
    PeerTable a("p0", p.clock), b("p5", p.clock);
    std::vector<Announcement> seen_a{p.join(0), p.join(1), p.join(2, 1), p.leave(3, 4)};
    std::vector<Announcement> seen_b{p.join(5), p.leave(2, 3), p.join(3, 2), p.join(4)};
    a.merge(seen_a);
    b.merge(seen_b);

    // Oracle: per address, the announcement with the largest timestamp.
    std::map<std::string, Announcement> expect;
    for (const auto* list : {&seen_a, &seen_b})
      for (const auto& x : *list)
        if (!expect.contains(x.address) || expect.at(x.address).timestamp_ms < x.timestamp_ms)
          expect.insert_or_assign(x.address, x);

    a.merge(b.snapshot());
    b.merge(a.snapshot());
    auto sa = a.snapshot();
    CHECK(sa == b.snapshot());
    REQUIRE(sa.size() == expect.size());
    for (const auto& x : sa)
      CHECK(x == expect.at(x.address));
    CHECK_FALSE(a.contains("p2"));
    CHECK_FALSE(a.contains("p3"));
    CHECK(a.contains("p4"));
  }
}
