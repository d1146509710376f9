#include "ocdn/simharness.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <thread>

namespace ocdn::sim {

using json = nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

/// std distributions on top of a RandomSource.
struct Urbg
{
  using result_type = std::uint64_t;
  RandomSource& rng;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return rng.next_u64(); }
};

const core::KeyPair& sim_keypair(std::uint64_t seed, const std::string& label)
{
  static std::mutex mutex;
  static std::map<std::pair<std::uint64_t, std::string>, core::KeyPair> pool;
  std::lock_guard lock(mutex);
  auto key = std::make_pair(seed, label);
  auto it = pool.find(key);
  if (it == pool.end()) {
    SeededRandom rng(seed, "sim-keypair/" + label);
    it = pool.emplace(key, core::KeyPair::generate(rng)).first;
  }
  return it->second;
}

std::string format_ms(double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s)
{
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

void write_file(const std::filesystem::path& path, const std::string& text)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error("cannot write " + path.string());
  out << text;
}

std::string exit_address(int e) { return "10.0.1." + std::to_string(e + 1) + ":8080"; }
std::string client_address(int c)
{
  return "10.0.2." + std::to_string(c / 250 + 1) + "." + std::to_string(c % 250 + 1) + ":7000";
}

// ---------------------------------------------------------------------------

struct Request
{
  core::CanonicalUrl url;
  client::Mode mode;
};

struct Workload
{
  std::vector<publisher::PlanObject> objects;
  std::vector<Request> requests;
};

Workload build_workload(const Scenario& sc, SeededRandom& rng, publisher::Participation part)
{
  Workload w;
  std::map<std::string, std::size_t> seen;
  auto add_object = [&](const std::string& text, std::uint64_t size, std::uint32_t encodings) {
    if (seen.contains(text))
      return;
    seen.emplace(text, w.objects.size());
    w.objects.push_back(
      {core::CanonicalUrl::parse(text), rng.bytes(size), std::max<std::uint32_t>(1, encodings), part});
  };

  for (const auto& item : sc.workload) {
    add_object(item.url, item.size, item.encodings ? item.encodings : sc.encodings);
    auto url = core::CanonicalUrl::parse(item.url);
    for (std::uint32_t k = 0; k < item.count; ++k)
      w.requests.push_back({url, item.mode});
  }

  auto popular = [&](const std::string& prefix, unsigned n, const std::vector<std::uint64_t>& sizes,
                     double exponent, std::uint64_t requests, client::Mode mode, bool flatten,
                     std::uint32_t cap) {
    auto shares = zipf_shares(n, exponent);
    std::map<core::CanonicalUrl, double> by_url;
    std::vector<core::CanonicalUrl> urls;
    for (unsigned r = 0; r < n; ++r) {
      urls.push_back(core::CanonicalUrl::parse(prefix + std::to_string(r + 1)));
      by_url[urls.back()] = shares[r];
    }
    std::map<core::CanonicalUrl, std::uint32_t> counts;
    if (flatten)
      counts = publisher::choose_encoding_counts(by_url, cap);
    for (unsigned r = 0; r < n; ++r)
      add_object(urls[r].text(), sizes[r], flatten ? counts.at(urls[r]) : sc.encodings);
    Urbg g{rng};
    std::discrete_distribution<unsigned> pick(shares.begin(), shares.end());
    for (std::uint64_t k = 0; k < requests; ++k)
      w.requests.push_back({urls[pick(g)], mode});
  };

  if (sc.zipf) {
    const auto& z = *sc.zipf;
    popular("https://zipf.example/obj/", z.urls, std::vector<std::uint64_t>(z.urls, z.size),
            z.exponent, z.requests, z.mode, z.flatten, z.cap);
  }
  if (sc.surge) {
    const auto& s = *sc.surge;
    SeededRandom size_rng = rng.fork("surge-sizes");
    popular("https://surge.example/obj/", s.objects, surge_sizes(s, size_rng), 1.0, s.requests,
            s.mode, false, 1);
  }
  return w;
}

std::uint32_t encoding_cap(const Scenario& sc)
{
  std::uint32_t cap = core::kDefaultMaxEncodings;
  if (sc.zipf)
    cap = std::max(cap, sc.zipf->cap);
  cap = std::max(cap, sc.encodings);
  for (const auto& item : sc.workload)
    cap = std::max(cap, item.encodings);
  return std::min<std::uint32_t>(cap, 256);
}

class Recorder final : public metrics::OpRecorder
{
public:
  void record(const metrics::OpSample& s) override
  {
    std::lock_guard lock(m_mutex);
    m_samples.push_back(s);
  }
  std::vector<metrics::OpSample> take()
  {
    std::lock_guard lock(m_mutex);
    return std::exchange(m_samples, {});
  }

private:
  std::mutex m_mutex;
  std::vector<metrics::OpSample> m_samples;
};

/// Times the exit's own work, excluding the deliveries it dispatches.
class TimedHandler final : public net::RelayHandler
{
public:
  TimedHandler(net::RelayHandler& inner, const double& delivery_us, double& total_us)
    : m_inner(inner)
    , m_delivery_us(delivery_us)
    , m_total_us(total_us)
  {
  }

  void on_relay(const net::RelayMessage& msg, const std::string& from) override
  {
    double before = m_delivery_us;
    auto t0 = SteadyClock::now();
    m_inner.on_relay(msg, from);
    double us = std::chrono::duration<double, std::micro>(SteadyClock::now() - t0).count();
    m_total_us += us - (m_delivery_us - before);
  }
  void on_deliver(const net::DeliverMessage& msg, const std::string& from) override
  {
    m_inner.on_deliver(msg, from);
  }

private:
  net::RelayHandler& m_inner;
  const double& m_delivery_us;
  double& m_total_us;
};

struct ExitCountersSum
{
  std::uint64_t cache_gets = 0;
  std::uint64_t flashcrowd_hits = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t key_fetches = 0;
};

struct TraceEvent
{
  net::LocalNetwork::Kind kind;
  std::string from;
  std::string to;
  std::size_t bytes = 0;
  SteadyClock::time_point at;
};

/// All roles for one scenario, wired together in-process.
class Deployment
{
public:
  explicit Deployment(const Scenario& sc)
    : sc(sc)
    , rng(sc.seed, "sim")
    , origin_rng(rng.fork("origin"))
    , origin(sim_keypair(sc.seed, "origin"), clock, origin_rng,
             publisher::OriginConfig{sc.key_lifetime_s, encoding_cap(sc)})
  {
    if (sc.caches < 1 || sc.exits < 1 || sc.clients < 1)
      throw RangeError("scenario needs at least one cache, exit and client");
    for (int c = 0; c < sc.caches; ++c) {
      nodes.push_back(std::make_unique<cache::CacheNode>(clock));
      targets.push_back(std::make_shared<cache::LocalCacheEndpoint>(
        *nodes.back(), "cache-" + std::to_string(c), "origin.example:443"));
    }

    for (int e = 0; e < sc.exits; ++e) {
      const auto& kp = sim_keypair(sc.seed, "exit-" + std::to_string(e));
      std::string address = exit_address(e);
      std::string ip = address.substr(0, address.find(':'));
      roster.entries.push_back({ring::SelfCertifyingId::for_key(ip, kp.public_key()), address,
                                kp.public_key()});
      exit_set.insert(address);
    }
    roster.version = 1;
    authority = std::make_unique<keydist::KeyAuthority>(
      origin, roster.ring(sc.virtual_points, sc.replication));
    channel = std::make_shared<keydist::LocalKeyChannel>(*authority);
    origin_directory.add("http://", channel);
    origin_directory.add("https://", channel);

    for (int e = 0; e < sc.exits; ++e) {
      const auto& entry = roster.entries[e];
      const auto& kp = sim_keypair(sc.seed, "exit-" + std::to_string(e));
      exit_rngs.push_back(std::make_unique<SeededRandom>(rng.fork("exit-" + std::to_string(e))));
      fetchers.push_back(
        std::make_unique<keydist::KeyFetcher>(kp, entry.id, origin_directory, clock));
      std::vector<std::shared_ptr<net::CacheEndpoint>> eps;
      for (int c = 0; c < sc.caches; ++c)
        eps.push_back(std::make_shared<cache::LocalCacheEndpoint>(
          *nodes[c], "cache-" + std::to_string(c), entry.address));
      exitproxy::ExitConfig cfg{entry.address, sc.flashcrowd, encoding_cap(sc), true};
      exits.push_back(std::make_unique<exitproxy::ExitProxy>(cfg, kp, *fetchers.back(), eps,
                                                             network, clock, *exit_rngs.back()));
      exits.back()->set_op_recorder(&recorder);
      timed.push_back(std::make_unique<TimedHandler>(*exits.back(), delivery_us, exit_us));
      network.attach(entry.address, timed.back().get());
    }

    directory = std::make_unique<client::ExitDirectory>(roster, sc.virtual_points, sc.replication);
    std::vector<client::Announcement> joins;
    for (int c = 0; c < sc.clients; ++c) {
      client_addresses.push_back(client_address(c));
      SeededRandom id_rng = rng.fork("peer-id-" + std::to_string(c));
      auto identity = core::PeerIdentity::generate(id_rng);
      joins.push_back(
        client::Announcement::make(identity, client_addresses.back(), clock.now_ms(), false));
    }
    for (int c = 0; c < sc.clients; ++c) {
      tables.push_back(std::make_unique<client::PeerTable>(client_addresses[c], clock));
      tables.back()->merge(joins);
      client_rngs.push_back(
        std::make_unique<SeededRandom>(rng.fork("client-" + std::to_string(c))));
      clients.push_back(std::make_unique<client::ClientProxy>(
        client_addresses[c], *directory, *tables.back(), network, *client_rngs.back()));
      clients.back()->set_op_recorder(&recorder);
      network.attach(client_addresses[c], clients.back().get());
      baseline_eps.push_back(std::make_shared<cache::LocalCacheEndpoint>(
        *nodes[c % sc.caches], "cache-" + std::to_string(c % sc.caches), client_addresses[c]));
    }

    network.set_observer([this](const net::LocalNetwork::Transmission& t) {
      if (this->sc.timing == Timing::Native && this->sc.alpha_ms > 0 && client_exit(t.from, t.to))
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(this->sc.alpha_ms));
      auto now = SteadyClock::now();
      if (t.kind == net::LocalNetwork::Kind::Deliver)
        deliver_started = now;
      trace.push_back({t.kind, t.from, t.to, t.wire.size(), now});
    });
    network.set_after_deliver([this](const net::LocalNetwork::Transmission& t) {
      auto now = SteadyClock::now();
      delivery_us += std::chrono::duration<double, std::micro>(now - deliver_started).count();
      delivered.emplace_back(t.to, now);
    });
  }

  bool is_exit(const std::string& a) const { return exit_set.contains(a); }
  bool client_exit(const std::string& a, const std::string& b) const
  {
    return is_exit(a) != is_exit(b);
  }
  double link(const std::string& a, const std::string& b) const
  {
    return sc.cost.link_ms + (client_exit(a, b) ? sc.alpha_ms : 0.0);
  }

  AdversaryView adversary_view() const
  {
    std::vector<AdversaryView::NodeView> views;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      views.push_back({"cache-" + std::to_string(i), nodes[i]->dump_log(), nodes[i]->entries(),
                       nodes[i]->stored_bytes()});
    return AdversaryView(std::move(views));
  }

  ExitView exit_view() const
  {
    std::vector<exitproxy::Observation> all;
    for (const auto& e : exits) {
      auto obs = e->observations();
      all.insert(all.end(), obs.begin(), obs.end());
    }
    return ExitView(std::move(all));
  }

  Scenario sc;
  ManualClock clock;
  SeededRandom rng;
  SeededRandom origin_rng;
  publisher::Origin origin;
  std::vector<std::unique_ptr<cache::CacheNode>> nodes;
  std::vector<publisher::Target> targets;
  ring::Roster roster;
  std::set<std::string> exit_set;
  std::unique_ptr<keydist::KeyAuthority> authority;
  std::shared_ptr<keydist::LocalKeyChannel> channel;
  keydist::OriginDirectory origin_directory;
  net::LocalNetwork network;
  Recorder recorder;
  std::vector<std::unique_ptr<SeededRandom>> exit_rngs;
  std::vector<std::unique_ptr<keydist::KeyFetcher>> fetchers;
  std::vector<std::unique_ptr<exitproxy::ExitProxy>> exits;
  std::vector<std::unique_ptr<TimedHandler>> timed;
  std::unique_ptr<client::ExitDirectory> directory;
  std::vector<std::string> client_addresses;
  std::vector<std::unique_ptr<client::PeerTable>> tables;
  std::vector<std::unique_ptr<SeededRandom>> client_rngs;
  std::vector<std::unique_ptr<client::ClientProxy>> clients;
  std::vector<std::shared_ptr<cache::LocalCacheEndpoint>> baseline_eps;

  std::vector<TraceEvent> trace;
  std::vector<std::pair<std::string, SteadyClock::time_point>> delivered;
  SteadyClock::time_point deliver_started;
  double delivery_us = 0.0;
  double exit_us = 0.0;
};

ExitCountersSum sum_counters(const Deployment& d)
{
  ExitCountersSum s;
  for (const auto& e : d.exits) {
    auto c = e->counters();
    s.cache_gets += c.cache_gets;
    s.flashcrowd_hits += c.flashcrowd_hits;
    s.deliveries += c.deliveries;
  }
  for (const auto& f : d.fetchers)
    s.key_fetches += f->round_trips();
  return s;
}

double modeled_op_ms(const CostModel& cost, metrics::Op op, std::uint64_t bytes)
{
  switch (op) {
  case metrics::Op::ExitLookup:
    return cost.lookup_ms;
  case metrics::Op::HmacDerivation:
    return cost.hmac_ms;
  default:
    return cost.aes(bytes);
  }
}

double elapsed_ms(SteadyClock::time_point a, SteadyClock::time_point b)
{
  return std::chrono::duration<double, std::milli>(b - a).count();
}

void publish_all(Deployment& d, Workload& w)
{
  if (w.objects.empty())
    return;
  d.origin.publish({w.objects, d.targets});
}

} // namespace

// ---------------------------------------------------------------------------
// Scenario

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const char* where)
{
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw MalformedError(std::string("unknown key '") + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out)
{
  if (j.contains(key))
    out = j.at(key).get<T>();
}

} // namespace

Scenario Scenario::from_json(std::string_view text)
{
  json j;
  try {
    j = json::parse(text);
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("scenario: ") + e.what());
  }
  if (!j.is_object())
    throw MalformedError("scenario must be a JSON object");
  try {
    reject_unknown(j,
                   {"caches", "exits", "clients", "virtual_points", "replication", "alpha_ms",
                    "interval_ms", "timing", "encodings", "key_lifetime_s", "flashcrowd", "cost",
                    "workload", "zipf", "surge", "seed"},
                   "scenario");
    Scenario s;
    read(j, "caches", s.caches);
    read(j, "exits", s.exits);
    read(j, "clients", s.clients);
    read(j, "virtual_points", s.virtual_points);
    read(j, "replication", s.replication);
    read(j, "alpha_ms", s.alpha_ms);
    read(j, "interval_ms", s.interval_ms);
    read(j, "encodings", s.encodings);
    read(j, "key_lifetime_s", s.key_lifetime_s);
    read(j, "seed", s.seed);
    if (j.contains("timing")) {
      auto t = j.at("timing").get<std::string>();
      if (t == "virtual")
        s.timing = Timing::Virtual;
      else if (t == "native")
        s.timing = Timing::Native;
      else
        throw MalformedError("timing must be virtual or native");
    }
    if (j.contains("flashcrowd")) {
      const auto& f = j.at("flashcrowd");
      reject_unknown(f, {"enabled", "threshold_rps", "window_ms", "ttl_ms"}, "flashcrowd");
      read(f, "enabled", s.flashcrowd.enabled);
      read(f, "threshold_rps", s.flashcrowd.threshold_rps);
      read(f, "window_ms", s.flashcrowd.window_ms);
      read(f, "ttl_ms", s.flashcrowd.ttl_ms);
    }
    if (j.contains("cost")) {
      const auto& c = j.at("cost");
      reject_unknown(c,
                     {"link_ms", "bandwidth_bytes_per_ms", "key_rtt_ms", "rsa_private_ms",
                      "rsa_public_ms", "aes_ms_per_mib", "hmac_ms", "lookup_ms"},
                     "cost");
      read(c, "link_ms", s.cost.link_ms);
      read(c, "bandwidth_bytes_per_ms", s.cost.bandwidth_bytes_per_ms);
      read(c, "key_rtt_ms", s.cost.key_rtt_ms);
      read(c, "rsa_private_ms", s.cost.rsa_private_ms);
      read(c, "rsa_public_ms", s.cost.rsa_public_ms);
      read(c, "aes_ms_per_mib", s.cost.aes_ms_per_mib);
      read(c, "hmac_ms", s.cost.hmac_ms);
      read(c, "lookup_ms", s.cost.lookup_ms);
    }
    for (const auto& item : j.value("workload", json::array())) {
      reject_unknown(item, {"url", "size", "mode", "count", "encodings"}, "workload item");
      WorkloadItem w;
      w.url = item.at("url").get<std::string>();
      read(item, "size", w.size);
      read(item, "count", w.count);
      read(item, "encodings", w.encodings);
      if (item.contains("mode"))
        w.mode = client::Mode::parse(item.at("mode").get<std::string>());
      core::CanonicalUrl::parse(w.url);
      s.workload.push_back(std::move(w));
    }
    if (j.contains("zipf")) {
      const auto& z = j.at("zipf");
      reject_unknown(z, {"urls", "exponent", "requests", "size", "flatten", "cap", "mode"}, "zipf");
      ZipfSpec spec;
      read(z, "urls", spec.urls);
      read(z, "exponent", spec.exponent);
      read(z, "requests", spec.requests);
      read(z, "size", spec.size);
      read(z, "flatten", spec.flatten);
      read(z, "cap", spec.cap);
      if (z.contains("mode"))
        spec.mode = client::Mode::parse(z.at("mode").get<std::string>());
      if (spec.urls == 0)
        throw MalformedError("zipf.urls must be positive");
      s.zipf = spec;
    }
    if (j.contains("surge")) {
      const auto& g = j.at("surge");
      reject_unknown(g,
                     {"objects", "requests", "lognormal_mu", "lognormal_sigma", "pareto_shape",
                      "pareto_min", "max_size", "mode"},
                     "surge");
      SurgeSpec spec;
      read(g, "objects", spec.objects);
      read(g, "requests", spec.requests);
      read(g, "lognormal_mu", spec.lognormal_mu);
      read(g, "lognormal_sigma", spec.lognormal_sigma);
      read(g, "pareto_shape", spec.pareto_shape);
      read(g, "pareto_min", spec.pareto_min);
      read(g, "max_size", spec.max_size);
      if (g.contains("mode"))
        spec.mode = client::Mode::parse(g.at("mode").get<std::string>());
      if (spec.objects == 0)
        throw MalformedError("surge.objects must be positive");
      s.surge = spec;
    }
    if (s.caches < 1 || s.exits < 1 || s.clients < 1 || s.interval_ms < 0 || s.alpha_ms < 0)
      throw MalformedError("scenario counts must be positive");
    return s;
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("scenario: ") + e.what());
  }
}

std::string Scenario::to_json() const
{
  json j{{"caches", caches},
         {"exits", exits},
         {"clients", clients},
         {"virtual_points", virtual_points},
         {"replication", replication},
         {"alpha_ms", alpha_ms},
         {"interval_ms", interval_ms},
         {"timing", timing == Timing::Virtual ? "virtual" : "native"},
         {"encodings", encodings},
         {"key_lifetime_s", key_lifetime_s},
         {"seed", seed}};
  j["flashcrowd"] = {{"enabled", flashcrowd.enabled},
                     {"threshold_rps", flashcrowd.threshold_rps},
                     {"window_ms", flashcrowd.window_ms},
                     {"ttl_ms", flashcrowd.ttl_ms}};
  j["cost"] = {{"link_ms", cost.link_ms},
               {"bandwidth_bytes_per_ms", cost.bandwidth_bytes_per_ms},
               {"key_rtt_ms", cost.key_rtt_ms},
               {"rsa_private_ms", cost.rsa_private_ms},
               {"rsa_public_ms", cost.rsa_public_ms},
               {"aes_ms_per_mib", cost.aes_ms_per_mib},
               {"hmac_ms", cost.hmac_ms},
               {"lookup_ms", cost.lookup_ms}};
  j["workload"] = json::array();
  for (const auto& w : workload)
    j["workload"].push_back({{"url", w.url},
                             {"size", w.size},
                             {"mode", w.mode.to_string()},
                             {"count", w.count},
                             {"encodings", w.encodings}});
  if (zipf)
    j["zipf"] = {{"urls", zipf->urls},   {"exponent", zipf->exponent},
                 {"requests", zipf->requests}, {"size", zipf->size},
                 {"flatten", zipf->flatten},   {"cap", zipf->cap},
                 {"mode", zipf->mode.to_string()}};
  if (surge)
    j["surge"] = {{"objects", surge->objects},
                  {"requests", surge->requests},
                  {"lognormal_mu", surge->lognormal_mu},
                  {"lognormal_sigma", surge->lognormal_sigma},
                  {"pareto_shape", surge->pareto_shape},
                  {"pareto_min", surge->pareto_min},
                  {"max_size", surge->max_size},
                  {"mode", surge->mode.to_string()}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Runs

RunResult run(const Scenario& sc)
{
  Deployment d(sc);
  SeededRandom workload_rng = d.rng.fork("workload");
  Workload w = build_workload(sc, workload_rng, publisher::Participation::EncryptedOnly);
  publish_all(d, w);

  RunResult result;
  for (const auto& obj : w.objects)
    result.content.emplace(obj.url.text(), obj.content);
  std::map<std::string, std::uint64_t> sizes;
  for (const auto& obj : w.objects)
    sizes.emplace(obj.url.text(), obj.content.size());

  SeededRandom pick_rng = d.rng.fork("originators");
  const std::int64_t t0 = d.clock.now_ms();
  d.recorder.take();
  auto start_counters = sum_counters(d);
  std::uint64_t start_transmissions = d.network.transmissions();
  const CostModel& cost = sc.cost;

  for (std::size_t seq = 0; seq < w.requests.size(); ++seq) {
    const auto& req = w.requests[seq];
    d.clock.set_ms(t0 + static_cast<std::int64_t>(seq) * sc.interval_ms);
    auto& client = *d.clients[pick_rng.uniform(d.clients.size())];

    std::vector<std::size_t> log_before;
    for (const auto& n : d.nodes)
      log_before.push_back(n->log_size());
    auto before = sum_counters(d);
    d.trace.clear();
    d.delivered.clear();

    RequestMetric m;
    m.seq = seq;
    m.url = req.url.text();
    m.size = sizes.at(m.url);
    m.mode = req.mode.to_string();
    m.originator = client.address();

    auto started = SteadyClock::now();
    std::optional<client::FetchResult> res;
    net::RequestId id{};
    try {
      id = client.send(req.url, req.mode);
      res = client.take_result(id);
    }
    catch (const Error& e) {
      m.status = std::string("client-error: ") + e.what();
    }
    auto samples = d.recorder.take();
    auto after = sum_counters(d);
    m.request_id = to_hex(id);
    if (res) {
      m.status = std::string(exitproxy::to_string(res->status));
      m.ok = res->ok() && res->body == result.content.at(m.url);
      if (res->ok() && !m.ok)
        m.status = "content-mismatch";
    }
    else if (m.status.empty()) {
      m.status = "no-delivery";
    }

    for (const auto& e : d.trace)
      if (e.kind == net::LocalNetwork::Kind::Relay && d.is_exit(e.to))
        m.exit = e.to;

    if (sc.timing == Timing::Virtual) {
      double t = cost.lookup_ms + cost.rsa_public_ms;
      for (const auto& e : d.trace)
        if (e.kind == net::LocalNetwork::Kind::Relay)
          t += d.link(e.from, e.to) + cost.transfer(e.bytes);
      t += cost.rsa_private_ms;
      if (after.key_fetches > before.key_fetches)
        t += double(after.key_fetches - before.key_fetches) * (cost.key_rtt_ms + cost.rsa_private_ms);
      t += 2.0 * cost.link_ms * double(after.cache_gets - before.cache_gets);
      for (const auto& s : samples) {
        if (s.op == metrics::Op::HmacDerivation)
          t += cost.hmac_ms;
        else if (s.op == metrics::Op::SharedKeyDecrypt)
          t += cost.transfer(s.bytes) + cost.aes(s.bytes);
        else if (s.op == metrics::Op::SessionKeyEncrypt)
          t += cost.aes(s.bytes);
      }
      // Unicast fan-out shares the exit's uplink in route order.
      double depart = t;
      for (const auto& e : d.trace) {
        if (e.kind != net::LocalNetwork::Kind::Deliver)
          continue;
        if (e.to == m.originator && res) {
          m.ttfb_ms = depart + d.link(e.from, e.to);
          m.completion_ms = m.ttfb_ms + cost.transfer(e.bytes) + cost.aes(e.bytes);
          break;
        }
        depart += cost.transfer(e.bytes);
      }
    }
    else {
      for (const auto& e : d.trace)
        if (e.kind == net::LocalNetwork::Kind::Deliver && e.to == m.originator) {
          m.ttfb_ms = elapsed_ms(started, e.at);
          break;
        }
      for (const auto& [to, at] : d.delivered)
        if (to == m.originator)
          m.completion_ms = elapsed_ms(started, at);
    }
    if (!res)
      m.ttfb_ms = m.completion_ms = 0.0;

    for (const auto& s : samples)
      result.metrics.ops.push_back(
        {m.request_id, s.op, s.bytes, modeled_op_ms(cost, s.op, s.bytes), s.native_us});

    result.truth.originator[m.request_id] = m.originator;
    auto& refs = result.truth.cache_records[m.request_id];
    for (std::size_t n = 0; n < d.nodes.size(); ++n) {
      auto size = d.nodes[n]->log_size();
      for (auto r = log_before[n]; r < size; ++r)
        refs.push_back({n, r});
    }

    ++result.metrics.counters.requests;
    if (!m.ok)
      ++result.metrics.counters.failures;
    result.metrics.requests.push_back(std::move(m));
  }

  auto end = sum_counters(d);
  auto& c = result.metrics.counters;
  c.cache_gets = end.cache_gets - start_counters.cache_gets;
  c.flashcrowd_hits = end.flashcrowd_hits - start_counters.flashcrowd_hits;
  c.deliveries = end.deliveries - start_counters.deliveries;
  c.key_fetches = end.key_fetches - start_counters.key_fetches;
  c.transmissions = d.network.transmissions() - start_transmissions;
  c.exit_cpu_us = d.exit_us;

  result.adversary = d.adversary_view();
  result.exit_view = d.exit_view();
  return result;
}

Metrics baseline_run(const Scenario& sc)
{
  Deployment d(sc);
  SeededRandom workload_rng = d.rng.fork("workload");
  Workload w = build_workload(sc, workload_rng, publisher::Participation::PlaintextOnly);
  publish_all(d, w);

  std::map<std::string, const Bytes*> content;
  for (const auto& obj : w.objects)
    content.emplace(obj.url.text(), &obj.content);

  Metrics metrics;
  SeededRandom pick_rng = d.rng.fork("originators");
  SeededRandom id_rng = d.rng.fork("baseline-ids");
  const std::int64_t t0 = d.clock.now_ms();
  const CostModel& cost = sc.cost;
  for (std::size_t seq = 0; seq < w.requests.size(); ++seq) {
    const auto& req = w.requests[seq];
    d.clock.set_ms(t0 + static_cast<std::int64_t>(seq) * sc.interval_ms);
    auto c = pick_rng.uniform(d.clients.size());

    RequestMetric m;
    m.seq = seq;
    m.request_id = to_hex(id_rng.bytes(16));
    m.url = req.url.text();
    m.size = content.at(m.url)->size();
    m.mode = "baseline";
    m.originator = d.client_addresses[c];

    auto started = SteadyClock::now();
    auto body = d.baseline_eps[c]->get_plain(m.url);
    auto finished = SteadyClock::now();
    m.ok = body && *body == *content.at(m.url);
    m.status = !body ? "not-found" : m.ok ? "ok" : "content-mismatch";

    if (sc.timing == Timing::Virtual) {
      m.ttfb_ms = 2.0 * cost.link_ms + cost.transfer(m.url.size());
      m.completion_ms = m.ttfb_ms + cost.transfer(m.size);
    }
    else {
      m.ttfb_ms = m.completion_ms = elapsed_ms(started, finished);
    }
    ++metrics.counters.requests;
    ++metrics.counters.cache_gets;
    if (!m.ok)
      ++metrics.counters.failures;
    metrics.requests.push_back(std::move(m));
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// Outputs

std::string Metrics::metrics_csv() const
{
  std::string out = "request_id,url,size,mode,ttfb_ms,completion_ms\n";
  for (const auto& r : requests)
    out += r.request_id + "," + csv_field(r.url) + "," + std::to_string(r.size) + "," + r.mode +
           "," + format_ms(r.ttfb_ms) + "," + format_ms(r.completion_ms) + "\n";
  return out;
}

std::string Metrics::ops_csv() const
{
  std::string out = "request_id,op,bytes,modeled_ms,native_us\n";
  for (const auto& o : ops)
    out += o.request_id + "," + std::string(metrics::to_string(o.op)) + "," +
           std::to_string(o.bytes) + "," + format_ms(o.modeled_ms) + "," + format_ms(o.native_us) +
           "\n";
  return out;
}

std::string Metrics::summary_json() const
{
  auto stats = [](std::vector<double> v) {
    json s{{"count", v.size()}};
    if (v.empty())
      return s;
    std::sort(v.begin(), v.end());
    double sum = 0;
    for (double x : v)
      sum += x;
    s["mean"] = sum / double(v.size());
    s["median"] = v[v.size() / 2];
    s["p95"] = v[std::min(v.size() - 1, v.size() * 95 / 100)];
    s["max"] = v.back();
    return s;
  };

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_mode;
  std::vector<double> ttfb, completion;
  for (const auto& r : requests) {
    if (!r.ok)
      continue;
    ttfb.push_back(r.ttfb_ms);
    completion.push_back(r.completion_ms);
    by_mode[r.mode].first.push_back(r.ttfb_ms);
    by_mode[r.mode].second.push_back(r.completion_ms);
  }
  json j;
  j["requests"] = counters.requests;
  j["failures"] = counters.failures;
  j["counters"] = {{"cache_gets", counters.cache_gets},
                   {"key_fetches", counters.key_fetches},
                   {"flashcrowd_hits", counters.flashcrowd_hits},
                   {"deliveries", counters.deliveries},
                   {"transmissions", counters.transmissions},
                   {"exit_cpu_us", counters.exit_cpu_us}};
  j["ttfb_ms"] = stats(ttfb);
  j["completion_ms"] = stats(completion);
  for (auto& [mode, v] : by_mode)
    j["by_mode"][mode] = {{"ttfb_ms", stats(v.first)}, {"completion_ms", stats(v.second)}};

  std::map<std::string, std::vector<double>> op_us;
  for (const auto& o : ops)
    op_us[std::string(metrics::to_string(o.op))].push_back(o.native_us);
  for (auto& [op, v] : op_us)
    j["ops_native_us"][op] = stats(v);
  return j.dump(2);
}

Bytes AdversaryView::concatenated() const
{
  Bytes out;
  for (const auto& n : m_nodes) {
    for (const auto& rec : n.log) {
      append(out, as_bytes(rec.to_json()));
      out.push_back('\n');
    }
    append(out, n.stored);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analyses

std::string PopularityReport::to_json() const
{
  return json{{"ids", share.size()},
              {"max_share", max_share},
              {"min_share", min_share},
              {"flatness_ratio", flatness_ratio}}
    .dump(2);
}

PopularityReport popularity_analysis(const AdversaryView& view)
{
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& n : view.nodes())
    for (const auto& rec : n.log)
      if (rec.verb == "GET" && !rec.id.starts_with("plain:")) {
        ++counts[rec.id];
        ++total;
      }
  PopularityReport r;
  if (total == 0)
    return r;
  r.min_share = 1.0;
  for (const auto& [id, c] : counts) {
    double s = double(c) / double(total);
    r.share[id] = s;
    r.max_share = std::max(r.max_share, s);
    r.min_share = std::min(r.min_share, s);
  }
  r.flatness_ratio = r.max_share / r.min_share;
  return r;
}

std::string LinkabilityReport::to_json() const
{
  return json{{"requests", requests},
              {"unique_identification_rate", unique_identification_rate},
              {"mean_candidates", mean_candidates},
              {"min_candidates", min_candidates},
              {"max_candidates", max_candidates},
              {"uniform_guess_rate", uniform_guess_rate}}
    .dump(2);
}

namespace {

struct Tally
{
  LinkabilityReport r;
  double unique = 0, candidates = 0, guess = 0;
  bool first = true;

  void add(const std::set<std::string>& cands, const std::string& truth)
  {
    ++r.requests;
    candidates += double(cands.size());
    r.min_candidates = first ? cands.size() : std::min(r.min_candidates, cands.size());
    r.max_candidates = std::max(r.max_candidates, cands.size());
    first = false;
    if (cands.contains(truth)) {
      guess += 1.0 / double(cands.size());
      if (cands.size() == 1)
        unique += 1;
    }
  }

  LinkabilityReport finish()
  {
    if (r.requests) {
      r.unique_identification_rate = unique / double(r.requests);
      r.mean_candidates = candidates / double(r.requests);
      r.uniform_guess_rate = guess / double(r.requests);
    }
    return r;
  }
};

} // namespace

LinkabilityReport linkability_analysis(const AdversaryView& view, const GroundTruth& truth,
                                       const std::vector<std::string>& exit_addresses)
{
  std::set<std::string> exits(exit_addresses.begin(), exit_addresses.end());
  Tally t;
  for (const auto& [request, originator] : truth.originator) {
    std::set<std::string> cands;
    auto it = truth.cache_records.find(request);
    if (it != truth.cache_records.end())
      for (const auto& ref : it->second) {
        const auto& peer = view.nodes().at(ref.node).log.at(ref.record).peer;
        if (!exits.contains(peer))
          cands.insert(peer);
      }
    t.add(cands, originator);
  }
  return t.finish();
}

LinkabilityReport linkability_analysis(const ExitView& view, const GroundTruth& truth)
{
  Tally t;
  for (const auto& obs : view.observations()) {
    auto it = truth.originator.find(to_hex(obs.request));
    if (it == truth.originator.end())
      continue;
    std::set<std::string> cands(obs.route.begin(), obs.route.end() - 1);
    t.add(cands, it->second);
  }
  return t.finish();
}

// ---------------------------------------------------------------------------
// Workloads and figures

std::vector<double> zipf_shares(unsigned n, double exponent)
{
  std::vector<double> w(n);
  double sum = 0;
  for (unsigned r = 0; r < n; ++r)
    sum += w[r] = 1.0 / std::pow(double(r + 1), exponent);
  for (auto& x : w)
    x /= sum;
  return w;
}

std::vector<std::uint64_t> surge_sizes(const SurgeSpec& spec, RandomSource& rng)
{
  Urbg g{rng};
  std::bernoulli_distribution body(0.8);
  std::lognormal_distribution<double> lognormal(spec.lognormal_mu, spec.lognormal_sigma);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double small_cap = 64 * 1024;
  std::vector<std::uint64_t> out;
  for (unsigned i = 0; i < spec.objects; ++i) {
    double size;
    if (body(g))
      size = std::clamp(std::round(lognormal(g)), 1.0, small_cap);
    else
      size = std::min(double(spec.pareto_min) / std::pow(1.0 - unit(g), 1.0 / spec.pareto_shape),
                      double(spec.max_size));
    out.push_back(static_cast<std::uint64_t>(size));
  }
  return out;
}

std::vector<std::string> exit_addresses(const Scenario& scenario)
{
  std::vector<std::string> out;
  for (int e = 0; e < scenario.exits; ++e)
    out.push_back(exit_address(e));
  return out;
}

void write_outputs(const RunResult& result, const std::vector<std::string>& exits,
                   const std::filesystem::path& dir)
{
  std::filesystem::create_directories(dir);
  write_file(dir / "metrics.csv", result.metrics.metrics_csv());
  write_file(dir / "ops.csv", result.metrics.ops_csv());
  write_file(dir / "summary.json", result.metrics.summary_json() + "\n");

  auto pop = popularity_analysis(result.adversary);
  auto from_logs = linkability_analysis(result.adversary, result.truth, exits);
  auto from_exit = linkability_analysis(result.exit_view, result.truth);
  json adv;
  adv["popularity"] = json::parse(pop.to_json());
  adv["linkability_cache_logs"] = json::parse(from_logs.to_json());
  adv["linkability_adversarial_exit"] = json::parse(from_exit.to_json());
  std::size_t records = 0, entries = 0;
  for (const auto& n : result.adversary.nodes()) {
    records += n.log.size();
    entries += n.entries.size();
  }
  adv["log_records"] = records;
  adv["stored_entries"] = entries;
  write_file(dir / "adversary.json", adv.dump(2) + "\n");
}

namespace {

Scenario single_size(std::uint64_t seed, std::uint64_t size, double alpha, unsigned reps)
{
  Scenario sc;
  sc.seed = seed;
  sc.alpha_ms = alpha;
  sc.flashcrowd.enabled = false;
  sc.workload.push_back(
    {"https://figures.example/object-" + std::to_string(size), size, client::Mode::direct(), reps});
  return sc;
}

double mean_of(const Metrics& m, double RequestMetric::*field)
{
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : m.requests)
    if (r.ok) {
      sum += r.*field;
      ++n;
    }
  return n ? sum / double(n) : 0.0;
}

double median(std::vector<double> v)
{
  if (v.empty())
    return 0.0;
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

} // namespace

void write_plotdata(std::uint64_t seed, const std::filesystem::path& dir)
{
  std::filesystem::create_directories(dir);
  const std::vector<std::uint64_t> sizes{1024, 10 * 1024, 100 * 1024, 1024 * 1024};
  const std::vector<double> alphas{0, 10, 50, 100};
  const unsigned reps = 5;

  std::string ttfb = "size_bytes,ocdn_ttfb_ms,baseline_ttfb_ms\n";
  std::string completion = "size_bytes,ocdn_completion_ms,baseline_completion_ms\n";
  std::string overhead = "size_bytes,op,modeled_ms,native_us\n";
  for (auto size : sizes) {
    auto sc = single_size(seed, size, 0, reps);
    auto r = run(sc);
    auto b = baseline_run(sc);
    ttfb += std::to_string(size) + "," + format_ms(mean_of(r.metrics, &RequestMetric::ttfb_ms)) +
            "," + format_ms(mean_of(b, &RequestMetric::ttfb_ms)) + "\n";
    completion += std::to_string(size) + "," +
                  format_ms(mean_of(r.metrics, &RequestMetric::completion_ms)) + "," +
                  format_ms(mean_of(b, &RequestMetric::completion_ms)) + "\n";
    for (auto op : metrics::kAllOps) {
      std::vector<double> modeled, native;
      for (const auto& o : r.metrics.ops)
        if (o.op == op) {
          modeled.push_back(o.modeled_ms);
          native.push_back(o.native_us);
        }
      overhead += std::to_string(size) + "," + std::string(metrics::to_string(op)) + "," +
                  format_ms(median(modeled)) + "," + format_ms(median(native)) + "\n";
    }
  }

  std::string latency = "alpha_ms,size_bytes,ocdn_ttfb_ms,ocdn_completion_ms,baseline_completion_ms\n";
  for (double alpha : alphas)
    for (auto size : sizes) {
      auto sc = single_size(seed, size, alpha, reps);
      auto r = run(sc);
      auto b = baseline_run(sc);
      latency += format_ms(alpha) + "," + std::to_string(size) + "," +
                 format_ms(mean_of(r.metrics, &RequestMetric::ttfb_ms)) + "," +
                 format_ms(mean_of(r.metrics, &RequestMetric::completion_ms)) + "," +
                 format_ms(mean_of(b, &RequestMetric::completion_ms)) + "\n";
    }

  std::string scal = "clients,exit_cpu_us_per_request\n";
  for (auto [clients, us] : scalability_curve({2, 4, 8, 16, 32}, 50, seed))
    scal += std::to_string(clients) + "," + format_ms(us) + "\n";

  write_file(dir / "ttfb.csv", ttfb);
  write_file(dir / "completion.csv", completion);
  write_file(dir / "latency.csv", latency);
  write_file(dir / "overhead.csv", overhead);
  write_file(dir / "scalability.csv", scal);
}

std::vector<std::pair<int, double>> scalability_curve(const std::vector<int>& client_counts,
                                                      std::uint64_t requests_per_point,
                                                      std::uint64_t seed)
{
  std::vector<std::pair<int, double>> out;
  for (int clients : client_counts) {
    Scenario sc;
    sc.seed = seed;
    sc.clients = clients;
    sc.exits = 1;
    sc.flashcrowd.enabled = false;
    sc.surge = SurgeSpec{20, requests_per_point};
    auto r = run(sc);
    out.emplace_back(clients, r.metrics.counters.requests
                                ? r.metrics.counters.exit_cpu_us / double(r.metrics.counters.requests)
                                : 0.0);
  }
  return out;
}

} // namespace ocdn::sim
