#include "doctest.h"

#include "cli.hpp"
#include "node_config.hpp"
#include "ocdn/ring.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ocdn;
using namespace ocdn::cli;
namespace fs = std::filesystem;

namespace {

struct Captured
{
  int code;
  std::string out;
};

Captured run(std::vector<std::string> args)
{
  args.insert(args.begin(), "ocdn");
  std::vector<char*> argv;
  for (auto& a : args)
    argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str()};
}

fs::path fresh_dir(const std::string& name)
{
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read(const fs::path& p)
{
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("config parse and serialize")
{
  auto cfg = NodeConfig::parse(R"(# exit node
role = "exit"
listen = "127.0.0.1:9000"
caches = ["10.0.0.1:80", "10.0.0.2:80"]
key_servers = "a=1.2.3.4:53, 5.6.7.8:53"
virtual_points = 32
flashcrowd_enabled = no
flashcrowd_threshold_rps = 12.5
)");
  CHECK(cfg.str("role") == "exit");
  CHECK(cfg.list("caches") == std::vector<std::string>{"10.0.0.1:80", "10.0.0.2:80"});
  CHECK(cfg.list("key_servers") == std::vector<std::string>{"a=1.2.3.4:53", "5.6.7.8:53"});
  CHECK(cfg.integer("virtual_points") == 32);
  CHECK_FALSE(cfg.boolean("flashcrowd_enabled"));
  CHECK(cfg.real("flashcrowd_threshold_rps") == doctest::Approx(12.5));
  CHECK(cfg.integer("replication") == 1);
  CHECK_FALSE(cfg.has("replication"));

  auto once = cfg.serialize();
  auto again = NodeConfig::parse(once);
  CHECK(again == cfg);
  CHECK(again.serialize() == once);

  NodeConfig empty;
  CHECK(NodeConfig::parse(empty.serialize()) == empty);
}

TEST_CASE("config rejections")
{
  CHECK_THROWS_AS(NodeConfig::parse("nope = 1"), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("virtual_points = lots"), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("virtual_points = 1.5"), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("strict_allowlist = perhaps"), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("[section]\nlisten = \"x\""), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("listen = [\"a\", \"b\"]"), ConfigError);
  CHECK_THROWS_AS(NodeConfig::parse("listen = \"a\"\nlisten = \"b\""), ConfigError);

  NodeConfig cfg;
  CHECK_THROWS_AS(cfg.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("max_encodings", "x"), ConfigError);
  cfg.set("max_encodings", "8");
  CHECK(cfg.integer("max_encodings") == 8);
}

TEST_CASE("malformed config exits 1 before serving")
{
  auto dir = fresh_dir("ocdn-cli-config");
  write(dir / "bad.toml", "role = \"cache\"\nlisten = \"127.0.0.1:0\"\ncolour = \"blue\"\n");
  CHECK(run({"--config", (dir / "bad.toml").string(), "serve-cache"}).code == kConfigError);
  write(dir / "role.toml", "role = \"exit\"\nlisten = \"127.0.0.1:0\"\n");
  CHECK(run({"--config", (dir / "role.toml").string(), "serve-cache"}).code == kConfigError);
  CHECK(run({"serve-cache", "--listen", "no-port"}).code == kConfigError);
  CHECK(run({"serve-cache", "--listen", "127.0.0.1:0", "--cache-capacity-bytes", "0"}).code ==
        kConfigError);
  CHECK(run({"--config", (dir / "missing.toml").string(), "serve-cache"}).code == kConfigError);
  CHECK(run({"no-such-command"}).code == kConfigError);
  CHECK(run({}).code == kConfigError);
  CHECK(run({"client", "--mode", "sideways:2", "--roster", "x", "get", "https://a.example/"}).code ==
        kConfigError);
}

TEST_CASE("roster new, add, show")
{
  auto dir = fresh_dir("ocdn-cli-roster");
  auto roster = (dir / "r.roster").string();
  auto authority = (dir / "auth.der").string();
  REQUIRE(run({"--seed", "3", "roster", "new", "--roster", roster, "--authority-key", authority}).code ==
          kOk);
  CHECK(fs::exists(authority + ".pub"));
  CHECK((fs::status(authority).permissions() & fs::perms::group_all) == fs::perms::none);
  CHECK(run({"roster", "new", "--roster", roster, "--authority-key", authority}).code == kConfigError);

  auto shown = run({"roster", "show", "--roster", roster, "--authority-pub", authority + ".pub"});
  CHECK(shown.code == kOk);
  CHECK(shown.out.find("version 1") != std::string::npos);

  // The exit's key file is created on first use by serve-exit; here roster add derives it.
  auto exit_key = (dir / "exit.der").string();
  {
    SeededRandom rng(5, "exit");
    auto keys = core::KeyPair::generate(rng);
    auto der = keys.private_der();
    std::ofstream(exit_key, std::ios::binary).write(reinterpret_cast<const char*>(der.data()),
                                                    static_cast<std::streamsize>(der.size()));
  }
  CHECK(run({"roster", "add", "--roster", roster, "--authority-key", authority, "--key", exit_key,
             "--address", "127.0.0.1:9100"})
          .code == kOk);
  CHECK(run({"roster", "add", "--roster", roster, "--authority-key", authority, "--key", exit_key,
             "--address", "127.0.0.1:9101"})
          .code == kOk);
  shown = run({"roster", "show", "--roster", roster, "--authority-pub", authority + ".pub"});
  CHECK(shown.out.find("version 3") != std::string::npos);
  CHECK(shown.out.find("127.0.0.1:9101") != std::string::npos);
  CHECK(shown.out.find("127.0.0.1:9100") == std::string::npos);

  auto parsed = ring::Roster::parse(read(roster));
  REQUIRE(parsed.entries.size() == 1);
  CHECK(ring::verify_member(parsed.entries[0].id, parsed.entries[0].public_key));

  // A roster signed by another authority is refused when the pin is set.
  auto other = (dir / "other.der").string();
  auto other_roster = (dir / "o.roster").string();
  REQUIRE(run({"roster", "new", "--roster", other_roster, "--authority-key", other}).code == kOk);
  CHECK(run({"roster", "show", "--roster", other_roster, "--authority-pub", authority + ".pub"}).code ==
        kConfigError);
}

TEST_CASE("sim subcommand writes outputs")
{
  auto dir = fresh_dir("ocdn-cli-sim");
  write(dir / "s.json",
        R"({"exits": 2, "clients": 4, "workload": [{"url": "https://a.example/x", "size": 3000, "mode": "routed:2", "count": 4}]})");
  auto res = run({"sim", "--scenario", (dir / "s.json").string(), "--out", (dir / "out").string(),
                  "--seed", "7"});
  CHECK(res.code == kOk);
  for (const char* f : {"metrics.csv", "ops.csv", "summary.json", "adversary.json"})
    CHECK(fs::exists(dir / "out" / f));
  write(dir / "bad.json", R"({"exits": 2, "surprise": true})");
  CHECK(run({"sim", "--scenario", (dir / "bad.json").string(), "--out", (dir / "o2").string()}).code ==
        kConfigError);
}
