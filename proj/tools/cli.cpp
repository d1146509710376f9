#include "cli.hpp"

#include "node_config.hpp"

#include "CLI11.hpp"
#include "ocdn/http.hpp"
#include "ocdn/publisher.hpp"
#include "ocdn/simharness.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace ocdn::cli {

namespace fs = std::filesystem;

namespace {

/// Values given as flags, keyed like the config file.
using Overrides = std::map<std::string, std::string>;

struct Context
{
  NodeConfig cfg;
  std::optional<std::uint64_t> seed;

  std::unique_ptr<RandomSource> rng(std::string_view label) const
  {
    if (seed)
      return std::make_unique<SeededRandom>(*seed, label);
    return std::make_unique<OsRandom>();
  }
};

std::string flag_for(std::string_view key)
{
  std::string flag = "--" + std::string(key);
  std::replace(flag.begin(), flag.end(), '_', '-');
  return flag;
}

/// Adds a flag for a config key; a given flag wins over the config file.
void config_flag(CLI::App* app, const std::string& key, Overrides& out)
{
  const auto* k = find_key(key);
  if (k->type == ValueType::List) {
    app
      ->add_option_function<std::vector<std::string>>(
        flag_for(key),
        [&out, key](const std::vector<std::string>& v) {
          std::string joined;
          for (const auto& item : v)
            joined += (joined.empty() ? "" : ",") + item;
          out[key] = joined;
        },
        k->help)
      ->delimiter(',');
    return;
  }
  app->add_option_function<std::string>(
    flag_for(key), [&out, key](const std::string& v) { out[key] = v; }, k->help);
}

void config_flags(CLI::App* app, std::initializer_list<const char*> keys, Overrides& out)
{
  for (const char* k : keys)
    config_flag(app, k, out);
}

std::string require(const NodeConfig& cfg, const std::string& key)
{
  auto v = cfg.str(key);
  if (v.empty())
    throw ConfigError(key + " is required (" + flag_for(key) + " or config)");
  return v;
}

void check_role(const NodeConfig& cfg, std::string_view role)
{
  auto configured = cfg.str("role");
  if (!configured.empty() && configured != role)
    throw ConfigError("config is for role '" + configured + "', not '" + std::string(role) + "'");
}

Bytes read_bytes(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes through a temporary and renames, so pollers never see half a file.
void write_bytes(const fs::path& path, ByteView data, bool owner_only)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out)
      throw Error("cannot write " + tmp.string());
  }
  if (owner_only)
    fs::permissions(tmp, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
  fs::rename(tmp, path);
}

std::vector<std::string> read_lines(const fs::path& path)
{
  std::istringstream in(to_string(read_bytes(path)));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (!line.empty())
      lines.push_back(line);
  }
  return lines;
}

std::pair<std::string, int> parse_address(const std::string& what, const std::string& address)
{
  try {
    return http::split_host_port(address);
  }
  catch (const MalformedError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string format_address(const std::string& host, int port)
{
  if (host.find(':') != std::string::npos)
    return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

std::optional<core::PublicKey> pinned_authority(const NodeConfig& cfg)
{
  auto path = cfg.str("authority_pub");
  if (path.empty())
    return std::nullopt;
  try {
    return core::PublicKey::from_der(read_bytes(path));
  }
  catch (const MalformedError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ring::Roster load_roster(const std::string& path, const std::optional<core::PublicKey>& pinned)
{
  try {
    return ring::Roster::parse(to_string(read_bytes(path)), pinned ? &*pinned : nullptr);
  }
  catch (const ConfigError&) {
    throw;
  }
  catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ring::Roster load_roster(const NodeConfig& cfg)
{
  auto pinned = pinned_authority(cfg);
  if (!pinned)
    std::cerr << "warning: no authority_pub pinned; trusting the roster's embedded authority\n";
  return load_roster(require(cfg, "roster"), pinned);
}

core::KeyPair load_keypair(const fs::path& path)
{
  try {
    return core::KeyPair::from_private_der(read_bytes(path));
  }
  catch (const ConfigError&) {
    throw;
  }
  catch (const Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

core::KeyPair load_or_create_keypair(const fs::path& path, RandomSource& rng)
{
  if (fs::exists(path))
    return load_keypair(path);
  auto keys = core::KeyPair::generate(rng);
  write_bytes(path, keys.private_der(), true);
  std::cerr << "created key " << path.string() << "\n";
  return keys;
}

/// Cache node addresses: the targets file when given, else the caches list.
std::vector<std::string> cache_addresses(const NodeConfig& cfg)
{
  auto addresses = cfg.str("targets").empty() ? cfg.list("caches") : read_lines(cfg.str("targets"));
  if (addresses.empty())
    throw ConfigError("no cache nodes: set targets or caches");
  for (const auto& a : addresses)
    parse_address("cache address", a);
  return addresses;
}

std::vector<publisher::Target> cache_targets(const std::vector<std::string>& addresses)
{
  std::vector<publisher::Target> out;
  for (const auto& a : addresses)
    out.push_back(std::make_shared<http::HttpCacheEndpoint>(a));
  return out;
}

publisher::OriginConfig origin_config(const NodeConfig& cfg)
{
  publisher::OriginConfig oc;
  oc.key_lifetime_s = cfg.integer("key_lifetime_s");
  auto max = cfg.integer("max_encodings");
  if (oc.key_lifetime_s <= 0 || max < 1 || max > 256)
    throw ConfigError("key_lifetime_s must be positive and max_encodings in [1, 256]");
  oc.max_encodings = static_cast<std::uint32_t>(max);
  return oc;
}

unsigned positive(const NodeConfig& cfg, const std::string& key)
{
  auto v = cfg.integer(key);
  if (v < 1 || v > 100'000)
    throw ConfigError(key + " must be in [1, 100000]");
  return static_cast<unsigned>(v);
}

/// Relay handler whose target exists only after the listener knows its port.
struct DeferredHandler final : net::RelayHandler
{
  net::RelayHandler* target = nullptr;

  void on_relay(const net::RelayMessage& m, const std::string& from) override
  {
    if (target)
      target->on_relay(m, from);
  }
  void on_deliver(const net::DeliverMessage& m, const std::string& from) override
  {
    if (target)
      target->on_deliver(m, from);
  }
};

/// Blocks SIGINT/SIGTERM for the calling thread and every thread it starts later.
class SignalWait
{
public:
  SignalWait()
  {
    sigemptyset(&m_set);
    sigaddset(&m_set, SIGINT);
    sigaddset(&m_set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &m_set, &m_old);
  }
  ~SignalWait() { pthread_sigmask(SIG_SETMASK, &m_old, nullptr); }

  /// Runs `tick` every `period` until a termination signal arrives.
  void run(std::chrono::milliseconds period, const std::function<void()>& tick = {})
  {
    timespec ts{};
    ts.tv_sec = period.count() / 1000;
    ts.tv_nsec = (period.count() % 1000) * 1'000'000;
    for (;;) {
      int sig = sigtimedwait(&m_set, nullptr, &ts);
      if (sig == SIGINT || sig == SIGTERM)
        return;
      if (tick) {
        try {
          tick();
        }
        catch (const std::exception& e) {
          std::cerr << "warning: " << e.what() << "\n";
        }
      }
    }
  }

private:
  sigset_t m_set{};
  sigset_t m_old{};
};

void announce_listening(const std::string& what, const std::string& address)
{
  std::cout << what << " listening on " << address << std::endl;
}

/// Re-reads a roster file when its modification time changes.
class RosterWatcher
{
public:
  RosterWatcher(fs::path path, std::optional<core::PublicKey> pinned)
    : m_path(std::move(path))
    , m_pinned(std::move(pinned))
  {
  }

  /// The roster if the file changed and parses, else nullopt. Bad rewrites keep the old roster.
  std::optional<ring::Roster> poll()
  {
    std::error_code ec;
    auto stamp = fs::last_write_time(m_path, ec);
    if (ec || stamp == m_stamp)
      return std::nullopt;
    try {
      auto roster = load_roster(m_path.string(), m_pinned);
      m_stamp = stamp;
      return roster;
    }
    catch (const std::exception& e) {
      std::cerr << "warning: roster reload: " << e.what() << "\n";
      return std::nullopt;
    }
  }

  ring::Roster read() const { return load_roster(m_path.string(), m_pinned); }

private:
  fs::path m_path;
  std::optional<core::PublicKey> m_pinned;
  fs::file_time_type m_stamp{};
};

// ---------------------------------------------------------------------------
// roster

int roster_new(Context& ctx)
{
  auto roster_path = require(ctx.cfg, "roster");
  auto key_path = require(ctx.cfg, "authority_key");
  auto pub_path = ctx.cfg.str("authority_pub");
  if (pub_path.empty())
    pub_path = key_path + ".pub";
  if (fs::exists(roster_path))
    throw ConfigError(roster_path + " already exists");

  auto rng = ctx.rng("roster-authority");
  auto authority = load_or_create_keypair(key_path, *rng);
  write_bytes(pub_path, authority.public_key().der(), false);
  ring::Roster roster;
  roster.version = 1;
  write_bytes(roster_path, as_bytes(roster.sign(authority)), false);
  std::cout << "roster " << roster_path << " version 1, authority public key " << pub_path << "\n";
  return kOk;
}

void add_member(ring::Roster& roster, const std::string& address, const core::PublicKey& pub)
{
  auto [host, port] = parse_address("member address", address);
  roster.upsert({ring::SelfCertifyingId::for_key(host, pub), format_address(host, port), pub});
}

int roster_add(Context& ctx, const std::string& address, const std::string& public_key_path)
{
  auto roster_path = require(ctx.cfg, "roster");
  auto authority = load_keypair(require(ctx.cfg, "authority_key"));
  core::PublicKey member;
  if (!public_key_path.empty()) {
    try {
      member = core::PublicKey::from_der(read_bytes(public_key_path));
    }
    catch (const MalformedError& e) {
      throw ConfigError(public_key_path + ": " + e.what());
    }
  }
  else {
    member = load_keypair(require(ctx.cfg, "key")).public_key();
  }
  auto roster = load_roster(roster_path, authority.public_key());
  add_member(roster, address, member);
  write_bytes(roster_path, as_bytes(roster.sign(authority)), false);
  std::cout << "roster " << roster_path << " version " << roster.version << "\n";
  return kOk;
}

int roster_show(Context& ctx)
{
  auto roster = load_roster(ctx.cfg);
  std::cout << "version " << roster.version << "\n"
            << "authority " << to_hex(roster.authority().fingerprint()) << "\n";
  for (const auto& e : roster.entries)
    std::cout << "member " << e.id.display() << " " << e.address << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// serve-cache

int serve_cache(Context& ctx)
{
  const auto& cfg = ctx.cfg;
  check_role(cfg, "cache");
  auto [host, port] = parse_address("listen", require(cfg, "listen"));
  cache::CacheNodeConfig cc;
  auto capacity = cfg.integer("cache_capacity_bytes");
  if (capacity <= 0)
    throw ConfigError("cache_capacity_bytes must be positive");
  cc.capacity_bytes = static_cast<std::uint64_t>(capacity);
  cc.strict_allowlist = cfg.boolean("strict_allowlist");
  for (const auto& path : cfg.list("trusted_origins")) {
    try {
      cc.trusted_origins.push_back(core::PublicKey::from_der(read_bytes(path)));
    }
    catch (const MalformedError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  SystemClock clock;
  cache::CacheNode node(clock, cc);
  http::CacheHttpServer server(node);
  SignalWait signals;
  int bound = server.bind(host, port);
  server.start();
  announce_listening("cache", format_address(host, bound));
  signals.run(std::chrono::seconds(1));
  server.stop();
  return kOk;
}

// ---------------------------------------------------------------------------
// serve-exit

keydist::OriginDirectory key_directory(const std::vector<std::string>& servers,
                                       std::int64_t timeout_ms)
{
  if (servers.empty())
    throw ConfigError("key_servers is required");
  keydist::OriginDirectory dir;
  for (const auto& spec : servers) {
    auto eq = spec.find('=');
    auto address = eq == std::string::npos ? spec : spec.substr(eq + 1);
    parse_address("key server", address);
    auto channel = std::make_shared<http::TcpKeyChannel>(address, std::chrono::milliseconds(timeout_ms));
    if (eq == std::string::npos) {
      dir.add("http://", channel);
      dir.add("https://", channel);
    }
    else {
      dir.add(spec.substr(0, eq), channel);
    }
  }
  return dir;
}

int serve_exit(Context& ctx, bool join)
{
  const auto& cfg = ctx.cfg;
  check_role(cfg, "exit");
  auto [host, port] = parse_address("listen", require(cfg, "listen"));
  auto rng = ctx.rng("exit:" + require(cfg, "listen"));
  auto caches = cache_addresses(cfg);
  auto directory = key_directory(cfg.list("key_servers"), cfg.integer("request_timeout_ms"));

  std::optional<core::KeyPair> authority;
  ring::Roster roster;
  if (join) {
    authority = load_keypair(require(cfg, "authority_key"));
    roster = load_roster(require(cfg, "roster"), authority->public_key());
  }
  exitproxy::ExitConfig ec;
  ec.flashcrowd.enabled = cfg.boolean("flashcrowd_enabled");
  ec.flashcrowd.threshold_rps = cfg.real("flashcrowd_threshold_rps");
  ec.flashcrowd.window_ms = cfg.integer("flashcrowd_window_ms");
  ec.flashcrowd.ttl_ms = cfg.integer("flashcrowd_ttl_ms");
  ec.max_encodings = origin_config(cfg).max_encodings;
  auto ttl = cfg.integer("key_cache_ttl_s");
  if (ttl <= 0 || ec.flashcrowd.window_ms <= 0 || ec.flashcrowd.ttl_ms <= 0)
    throw ConfigError("key_cache_ttl_s and flashcrowd durations must be positive");
  auto keys = load_or_create_keypair(require(cfg, "key"), *rng);

  SystemClock clock;
  auto self = ring::SelfCertifyingId::for_key(host, keys.public_key());
  keydist::KeyFetcher fetcher(keys, self, directory, clock, ttl);
  std::vector<std::shared_ptr<net::CacheEndpoint>> endpoints;
  for (const auto& a : caches)
    endpoints.push_back(std::make_shared<http::HttpCacheEndpoint>(a));
  http::HttpRelayNetwork network;

  DeferredHandler handler;
  http::RelayHttpServer server(handler);
  SignalWait signals;
  ec.address = format_address(host, server.bind(host, port));
  exitproxy::ExitProxy exit(ec, keys, fetcher, endpoints, network, clock, *rng);
  handler.target = &exit;

  if (join) {
    add_member(roster, ec.address, keys.public_key());
    write_bytes(require(cfg, "roster"), as_bytes(roster.sign(*authority)), false);
    std::cerr << "joined roster as " << self.display() << " (version " << roster.version << ")\n";
  }
  server.start();
  announce_listening("exit " + self.display(), ec.address);
  signals.run(std::chrono::seconds(1));
  server.stop();
  return kOk;
}

// ---------------------------------------------------------------------------
// serve-keydist

/// The origin state on disk, reloaded when another process rewrites it. Lazy rotations are saved back.
class DiskOrigin final : public keydist::KeySource
{
public:
  DiskOrigin(fs::path dir, const Clock& clock, RandomSource& rng, publisher::OriginConfig config,
             std::vector<publisher::Target> targets)
    : m_dir(std::move(dir))
    , m_clock(clock)
    , m_rng(rng)
    , m_config(config)
    , m_targets(std::move(targets))
  {
    std::lock_guard lock(m_mutex);
    reload_locked();
  }

  std::optional<keydist::KeyGrant> lookup(const core::CanonicalUrl& url) override
  {
    std::lock_guard lock(m_mutex);
    if (stamp() != m_stamp)
      reload_locked();
    auto before = m_origin->key_for(url);
    std::optional<keydist::KeyGrant> grant;
    try {
      grant = m_origin->lookup(url);
    }
    catch (const publisher::PartialRotation& e) {
      std::cerr << "warning: " << e.what() << "\n";
      grant = m_origin->lookup(url);
    }
    if (grant && (!before || before->key_id() != grant->key.key_id())) {
      m_origin->save(m_dir);
      m_stamp = stamp();
    }
    return grant;
  }

private:
  fs::file_time_type stamp() const
  {
    std::error_code ec;
    return fs::last_write_time(m_dir / "state.json", ec);
  }

  void reload_locked()
  {
    m_origin = publisher::Origin::load(m_dir, m_clock, m_rng, m_config);
    m_origin->set_targets(m_targets);
    m_stamp = stamp();
  }

  fs::path m_dir;
  const Clock& m_clock;
  RandomSource& m_rng;
  publisher::OriginConfig m_config;
  std::vector<publisher::Target> m_targets;
  std::mutex m_mutex;
  std::unique_ptr<publisher::Origin> m_origin;
  fs::file_time_type m_stamp{};
};

int serve_keydist(Context& ctx)
{
  const auto& cfg = ctx.cfg;
  check_role(cfg, "keydist");
  auto [host, port] = parse_address("listen", require(cfg, "listen"));
  fs::path keys_dir = require(cfg, "keys_dir");
  if (!fs::exists(keys_dir / "origin.der"))
    throw ConfigError(keys_dir.string() + " holds no origin state; run publish first");
  auto oc = origin_config(cfg);
  auto vpoints = positive(cfg, "virtual_points");
  auto replication = positive(cfg, "replication");
  std::vector<publisher::Target> targets;
  if (!cfg.str("targets").empty() || !cfg.list("caches").empty())
    targets = cache_targets(cache_addresses(cfg));
  auto pinned = pinned_authority(cfg);
  if (!pinned)
    std::cerr << "warning: no authority_pub pinned; trusting the roster's embedded authority\n";
  RosterWatcher watcher(require(cfg, "roster"), pinned);
  auto roster = watcher.poll();
  if (!roster)
    throw ConfigError("roster " + cfg.str("roster") + " is unreadable");

  SystemClock clock;
  auto rng = ctx.rng("keydist");
  std::unique_ptr<DiskOrigin> origin;
  try {
    origin = std::make_unique<DiskOrigin>(keys_dir, clock, *rng, oc, targets);
  }
  catch (const Error& e) {
    throw ConfigError(keys_dir.string() + ": " + e.what());
  }
  keydist::KeyAuthority authority(*origin, roster->ring(vpoints, replication));
  http::KeyLineServer server(authority);
  SignalWait signals;
  int bound = server.bind(host, port);
  server.start();
  announce_listening("keydist", format_address(host, bound));
  signals.run(std::chrono::seconds(1), [&] {
    if (auto fresh = watcher.poll()) {
      authority.set_ring(fresh->ring(vpoints, replication));
      std::cerr << "roster version " << fresh->version << " loaded\n";
    }
  });
  server.stop();
  return kOk;
}

// ---------------------------------------------------------------------------
// publish / keys rotate

std::unique_ptr<publisher::Origin> open_origin(const fs::path& dir, const Clock& clock,
                                               RandomSource& rng, publisher::OriginConfig oc,
                                               bool create)
{
  if (fs::exists(dir / "origin.der")) {
    try {
      return publisher::Origin::load(dir, clock, rng, oc);
    }
    catch (const Error& e) {
      throw ConfigError(dir.string() + ": " + e.what());
    }
  }
  if (!create)
    throw ConfigError(dir.string() + " holds no origin state");
  fs::create_directories(dir);
  return std::make_unique<publisher::Origin>(core::KeyPair::generate(rng), clock, rng, oc);
}

int publish(Context& ctx, const std::string& plan_path)
{
  const auto& cfg = ctx.cfg;
  check_role(cfg, "publisher");
  if (plan_path.empty())
    throw ConfigError("--plan is required");
  fs::path keys_dir = require(cfg, "keys_dir");
  auto oc = origin_config(cfg);
  auto addresses = cache_addresses(cfg);
  publisher::PublishPlan plan;
  try {
    plan = publisher::PublishPlan::from_json(to_string(read_bytes(plan_path)),
                                             fs::path(plan_path).parent_path());
  }
  catch (const ConfigError&) {
    throw;
  }
  catch (const Error& e) {
    throw ConfigError(plan_path + ": " + e.what());
  }
  plan.targets = cache_targets(addresses);

  SystemClock clock;
  auto rng = ctx.rng("publisher");
  auto origin = open_origin(keys_dir, clock, *rng, oc, true);
  try {
    auto report = origin->publish(plan);
    origin->save(keys_dir);
    std::cout << report.to_json() << "\n";
    return kOk;
  }
  catch (const publisher::PublishError& e) {
    origin->save(keys_dir);
    std::cout << e.report.to_json() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

int keys_rotate(Context& ctx, const std::string& url_text)
{
  const auto& cfg = ctx.cfg;
  check_role(cfg, "publisher");
  fs::path keys_dir = require(cfg, "keys_dir");
  std::optional<core::CanonicalUrl> url;
  try {
    url = core::CanonicalUrl::parse(url_text);
  }
  catch (const MalformedError& e) {
    throw ConfigError(std::string("--url: ") + e.what());
  }
  auto targets = cache_targets(cache_addresses(cfg));
  SystemClock clock;
  auto rng = ctx.rng("publisher");
  auto origin = open_origin(keys_dir, clock, *rng, origin_config(cfg), false);
  origin->set_targets(targets);
  try {
    auto key = origin->rotate_key(*url);
    origin->save(keys_dir);
    std::cout << "rotated " << url->origin() << " key " << to_hex(key.key_id()) << " expires "
              << key.expires_at() << "\n";
    return kOk;
  }
  catch (const publisher::PartialRotation& e) {
    origin->save(keys_dir);
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------
// client

class ClientNode
{
public:
  ClientNode(const Context& ctx, const std::string& listen)
    : m_rng(ctx.rng("client:" + listen))
    , m_roster_path(require(ctx.cfg, "roster"))
    , m_pinned(pinned_authority(ctx.cfg))
    , m_directory(load_roster(ctx.cfg), positive(ctx.cfg, "virtual_points"),
                  positive(ctx.cfg, "replication"))
    , m_identity(core::PeerIdentity::generate(*m_rng))
    , m_server(m_handler)
  {
    std::tie(m_host, m_port) = parse_address("listen", listen);
    if (!ctx.cfg.str("peers").empty())
      m_seeds = read_lines(ctx.cfg.str("peers"));
    for (const auto& s : m_seeds)
      parse_address("seed peer", s);
    m_inactivity_ms = ctx.cfg.integer("peer_inactivity_ms");
    if (m_inactivity_ms <= 0)
      throw ConfigError("peer_inactivity_ms must be positive");
  }

  /// Opens the socket and joins the membership.
  void start()
  {
    m_address = format_address(m_host, m_server.bind(m_host, m_port));
    m_peers = std::make_unique<client::PeerTable>(m_address, m_clock, m_inactivity_ms);
    m_server.set_peers(m_peers.get());
    m_proxy = std::make_unique<client::ClientProxy>(m_address, m_directory, *m_peers, m_network, *m_rng);
    m_proxy->set_roster_refresh([this]() -> std::optional<ring::Roster> {
      try {
        return load_roster(m_roster_path, m_pinned);
      }
      catch (const std::exception&) {
        return std::nullopt;
      }
    });
    m_handler.target = m_proxy.get();
    m_server.start();
    gossip(false);
  }

  /// Refreshes our own announcement and exchanges tables with the seeds.
  void gossip(bool leave)
  {
    auto self = client::Announcement::make(m_identity, m_address, m_clock.now_ms(), leave);
    m_peers->apply(self);
    for (const auto& seed : m_seeds) {
      if (seed == m_address)
        continue;
      try {
        m_network.announce(seed, {self});
        if (!leave)
          m_peers->merge(m_network.fetch_peers(seed));
      }
      catch (const TransportError& e) {
        std::cerr << "warning: seed " << seed << ": " << e.what() << "\n";
      }
    }
    m_peers->prune();
  }

  void stop()
  {
    gossip(true);
    m_server.stop();
  }

  client::ClientProxy& proxy() { return *m_proxy; }
  const std::string& address() const { return m_address; }

private:
  SystemClock m_clock;
  std::unique_ptr<RandomSource> m_rng;
  std::string m_roster_path;
  std::optional<core::PublicKey> m_pinned;
  client::ExitDirectory m_directory;
  core::PeerIdentity m_identity;
  std::vector<std::string> m_seeds;
  std::int64_t m_inactivity_ms = 0;
  std::string m_host;
  int m_port = 0;
  std::string m_address;
  http::HttpRelayNetwork m_network;
  DeferredHandler m_handler;
  http::RelayHttpServer m_server;
  std::unique_ptr<client::PeerTable> m_peers;
  std::unique_ptr<client::ClientProxy> m_proxy;
};

client::Mode client_mode(const NodeConfig& cfg)
{
  try {
    return client::Mode::parse(cfg.str("mode"));
  }
  catch (const Error& e) {
    throw ConfigError(std::string("mode: ") + e.what());
  }
}

int client_get(Context& ctx, const std::string& url_text)
{
  check_role(ctx.cfg, "client");
  auto listen = ctx.cfg.str("listen");
  if (listen.empty())
    listen = "127.0.0.1:0";
  auto mode = client_mode(ctx.cfg);
  std::optional<core::CanonicalUrl> url;
  try {
    url = core::CanonicalUrl::parse(url_text);
  }
  catch (const MalformedError& e) {
    throw ConfigError(std::string("url: ") + e.what());
  }
  auto timeout = std::chrono::milliseconds(ctx.cfg.integer("request_timeout_ms"));

  ClientNode node(ctx, listen);
  node.start();
  client::FetchResult result{};
  try {
    result = node.proxy().fetch(*url, mode, timeout);
  }
  catch (...) {
    node.stop();
    throw;
  }
  node.stop();
  if (!result.ok()) {
    std::cerr << "error: " << exitproxy::to_string(result.status) << "\n";
    return kRuntimeFailure;
  }
  std::fwrite(result.body.data(), 1, result.body.size(), stdout);
  std::fflush(stdout);
  return kOk;
}

int client_serve(Context& ctx)
{
  check_role(ctx.cfg, "client");
  auto listen = require(ctx.cfg, "listen");
  auto interval = ctx.cfg.integer("announce_interval_ms");
  if (interval <= 0)
    throw ConfigError("announce_interval_ms must be positive");
  ClientNode node(ctx, listen);
  SignalWait signals;
  node.start();
  announce_listening("client", node.address());
  signals.run(std::chrono::milliseconds(interval), [&] { node.gossip(false); });
  node.stop();
  return kOk;
}

// ---------------------------------------------------------------------------
// sim

int sim_run(Context& ctx, const std::string& scenario_path, const std::string& out)
{
  if (scenario_path.empty() || out.empty())
    throw ConfigError("--scenario and --out are required");
  sim::Scenario scenario;
  try {
    scenario = sim::Scenario::from_json(to_string(read_bytes(scenario_path)));
  }
  catch (const ConfigError&) {
    throw;
  }
  catch (const std::exception& e) {
    throw ConfigError(scenario_path + ": " + e.what());
  }
  if (ctx.seed)
    scenario.seed = *ctx.seed;
  auto result = sim::run(scenario);
  fs::create_directories(out);
  sim::write_outputs(result, sim::exit_addresses(scenario), out);
  std::cout << result.metrics.summary_json() << "\n";
  return kOk;
}

int sim_plotdata(Context& ctx, const std::string& out)
{
  if (out.empty())
    throw ConfigError("--out is required");
  fs::create_directories(out);
  sim::write_plotdata(ctx.seed.value_or(1), out);
  std::cout << "plot data written to " << out << "\n";
  return kOk;
}

} // namespace

int run_cli(int argc, char** argv)
{
  CLI::App app{"Oblivious CDN nodes and tools", "ocdn"};
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx;
  Overrides overrides;
  std::string config_path;
  app.add_option("--config", config_path, "node config file (default: $OCDN_CONFIG)");
  app.add_option_function<std::uint64_t>(
    "--seed", [&](std::uint64_t s) { ctx.seed = s; }, "deterministic randomness");

  std::function<int()> action;

  auto* roster = app.add_subcommand("roster", "create and edit signed exit rosters");
  roster->require_subcommand(1);
  auto* roster_new_cmd = roster->add_subcommand("new", "new authority key and empty roster");
  config_flags(roster_new_cmd, {"roster", "authority_key", "authority_pub"}, overrides);
  roster_new_cmd->callback([&] { action = [&] { return roster_new(ctx); }; });

  std::string member_address, member_pub;
  auto* roster_add_cmd = roster->add_subcommand("add", "add or replace an exit entry and re-sign");
  config_flags(roster_add_cmd, {"roster", "authority_key", "key"}, overrides);
  roster_add_cmd->add_option("--address", member_address, "exit host:port")->required();
  roster_add_cmd->add_option("--public-key", member_pub, "exit public key (DER); else derived from --key");
  roster_add_cmd->callback([&] { action = [&] { return roster_add(ctx, member_address, member_pub); }; });

  auto* roster_show_cmd = roster->add_subcommand("show", "verify and list a roster");
  config_flags(roster_show_cmd, {"roster", "authority_pub"}, overrides);
  roster_show_cmd->callback([&] { action = [&] { return roster_show(ctx); }; });

  auto* cache_cmd = app.add_subcommand("serve-cache", "run a cache node");
  config_flags(cache_cmd, {"listen", "cache_capacity_bytes", "strict_allowlist", "trusted_origins"},
           overrides);
  cache_cmd->callback([&] { action = [&] { return serve_cache(ctx); }; });

  bool join = false;
  auto* exit_cmd = app.add_subcommand("serve-exit", "run an exit proxy");
  config_flags(exit_cmd,
           {"listen", "key", "roster", "authority_key", "caches", "targets", "key_servers",
            "key_cache_ttl_s", "max_encodings", "flashcrowd_enabled", "flashcrowd_threshold_rps",
            "flashcrowd_window_ms", "flashcrowd_ttl_ms", "request_timeout_ms"},
           overrides);
  exit_cmd->add_flag("--join", join, "add this exit to the roster, signing with --authority-key");
  exit_cmd->callback([&] { action = [&] { return serve_exit(ctx, join); }; });

  auto* keydist_cmd = app.add_subcommand("serve-keydist", "run an origin's key server");
  config_flags(keydist_cmd,
           {"listen", "keys_dir", "roster", "authority_pub", "caches", "targets", "virtual_points",
            "replication", "key_lifetime_s", "max_encodings"},
           overrides);
  keydist_cmd->callback([&] { action = [&] { return serve_keydist(ctx); }; });

  std::string plan_path;
  auto* publish_cmd = app.add_subcommand("publish", "encrypt and push objects to cache nodes");
  config_flags(publish_cmd, {"keys_dir", "targets", "caches", "key_lifetime_s", "max_encodings"},
           overrides);
  publish_cmd->add_option("--plan", plan_path, "plan file (JSON)");
  publish_cmd->callback([&] { action = [&] { return publish(ctx, plan_path); }; });

  std::string rotate_url;
  auto* keys = app.add_subcommand("keys", "origin key management");
  keys->require_subcommand(1);
  auto* rotate_cmd = keys->add_subcommand("rotate", "replace a prefix's key and re-push its objects");
  config_flags(rotate_cmd, {"keys_dir", "targets", "caches", "key_lifetime_s", "max_encodings"},
           overrides);
  rotate_cmd->add_option("--url", rotate_url, "any URL under the prefix")->required();
  rotate_cmd->callback([&] { action = [&] { return keys_rotate(ctx, rotate_url); }; });

  std::string get_url;
  auto* client_cmd = app.add_subcommand("client", "peer proxy");
  client_cmd->require_subcommand(1);
  config_flags(client_cmd,
           {"listen", "roster", "authority_pub", "peers", "mode", "virtual_points", "replication",
            "peer_inactivity_ms", "announce_interval_ms", "request_timeout_ms"},
           overrides);
  auto* get_cmd = client_cmd->add_subcommand("get", "fetch one URL and write it to stdout");
  get_cmd->add_option("url", get_url, "URL to fetch")->required();
  get_cmd->callback([&] { action = [&] { return client_get(ctx, get_url); }; });
  auto* client_serve_cmd = client_cmd->add_subcommand("serve", "stay online and relay for others");
  client_serve_cmd->callback([&] { action = [&] { return client_serve(ctx); }; });

  std::string scenario_path, out_dir;
  auto* sim_cmd = app.add_subcommand("sim", "run a simulated deployment");
  sim_cmd->add_option("--scenario", scenario_path, "scenario file (JSON)");
  sim_cmd->add_option("--out", out_dir, "output directory");
  sim_cmd->callback([&] {
    if (!action)
      action = [&] { return sim_run(ctx, scenario_path, out_dir); };
  });
  auto* plot_cmd = sim_cmd->add_subcommand("plotdata", "write CSVs for the latency and overhead plots");
  plot_cmd->callback([&] { action = [&] { return sim_plotdata(ctx, out_dir); }; });

  try {
    app.parse(argc, argv);
  }
  catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  }
  catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  }
  catch (const CLI::ParseError& e) {
    app.exit(e);
    if (dynamic_cast<const CLI::ExtrasError*>(&e) || app.get_subcommands().empty())
      std::cerr << app.help();
    return kConfigError;
  }

  try {
    if (config_path.empty())
      if (const char* env = std::getenv("OCDN_CONFIG"))
        config_path = env;
    if (!config_path.empty())
      ctx.cfg = NodeConfig::load(config_path);
    for (const auto& [key, value] : overrides)
      ctx.cfg.set(key, value);
    return action();
  }
  catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

} // namespace ocdn::cli
