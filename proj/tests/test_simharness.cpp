#include "doctest.h"

#include "ocdn/simharness.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace ocdn;
using namespace ocdn::sim;

namespace {

Scenario sized(std::vector<std::uint64_t> sizes, std::uint32_t reps = 3, double alpha = 0)
{
  Scenario sc;
  sc.alpha_ms = alpha;
  for (auto size : sizes)
    sc.workload.push_back(
      {"https://sim.example/o" + std::to_string(size), size, client::Mode::direct(), reps});
  return sc;
}

std::map<std::uint64_t, double> mean_by_size(const Metrics& m, double RequestMetric::*field)
{
  std::map<std::uint64_t, std::pair<double, int>> acc;
  for (const auto& r : m.requests) {
    acc[r.size].first += r.*field;
    acc[r.size].second += 1;
  }
  std::map<std::uint64_t, double> out;
  for (auto& [k, v] : acc)
    out[k] = v.first / v.second;
  return out;
}

bool contains(const Bytes& hay, std::string_view needle)
{
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("empty workload gives empty metrics")
{
  auto r = run(Scenario{});
  CHECK(r.metrics.requests.empty());
  CHECK(r.metrics.ops.empty());
  CHECK(r.metrics.metrics_csv() == "request_id,url,size,mode,ttfb_ms,completion_ms\n");
  CHECK(baseline_run(Scenario{}).requests.empty());
}

TEST_CASE("same seed reproduces the metrics csv byte for byte")
{
  auto sc = sized({1024, 50'000});
  sc.workload.push_back({"https://sim.example/r", 2048, client::Mode::routed(2), 3});
  sc.workload.push_back({"https://sim.example/s", 2048, client::Mode::spoofed_direct(2), 3});
  sc.seed = 7;
  auto a = run(sc).metrics.metrics_csv();
  auto b = run(sc).metrics.metrics_csv();
  CHECK(a == b);
  sc.seed = 8;
  CHECK(run(sc).metrics.metrics_csv() != a);
}

TEST_CASE("completion grows with size and exceeds the plaintext baseline")
{
  const std::vector<std::uint64_t> sizes{1024, 100 * 1024, 1024 * 1024};
  auto sc = sized(sizes);
  auto r = run(sc);
  auto b = baseline_run(sc);
  REQUIRE(r.metrics.counters.failures == 0);
  REQUIRE(b.counters.failures == 0);
  for (const auto& m : r.metrics.requests) {
    CHECK(m.ok);
    CHECK(m.ttfb_ms <= m.completion_ms);
  }
  auto oc = mean_by_size(r.metrics, &RequestMetric::completion_ms);
  auto ot = mean_by_size(r.metrics, &RequestMetric::ttfb_ms);
  auto bc = mean_by_size(b, &RequestMetric::completion_ms);
  auto bt = mean_by_size(b, &RequestMetric::ttfb_ms);
  CHECK(oc[sizes[0]] < oc[sizes[1]]);
  CHECK(oc[sizes[1]] < oc[sizes[2]]);
  double prev_gap = -1;
  for (auto s : sizes) {
    CHECK(oc[s] >= bc[s]);
    double gap = ot[s] - bt[s];
    CHECK(gap > prev_gap);
    prev_gap = gap;
  }
  CHECK(bt[sizes[2]] < 2 * bt[sizes[0]]);
}

TEST_CASE("baseline fetches plaintext from the cache and logs it as such")
{
  auto sc = sized({4096}, 2);
  auto b = baseline_run(sc);
  REQUIRE(b.requests.size() == 2);
  for (const auto& m : b.requests) {
    CHECK(m.ok);
    CHECK(m.mode == "baseline");
  }
}

TEST_CASE("injected client-exit delay adds at least alpha to every request")
{
  auto base = run(sized({1024, 100 * 1024}, 4, 0)).metrics.requests;
  for (double alpha : {10.0, 50.0, 100.0}) {
    auto with = run(sized({1024, 100 * 1024}, 4, alpha)).metrics.requests;
    REQUIRE(with.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(with[i].request_id == base[i].request_id);
      CHECK(with[i].ttfb_ms - base[i].ttfb_ms >= alpha);
    }
  }
}

TEST_CASE("native timing smoke run")
{
  auto sc = sized({1024, 256 * 1024}, 2, 10);
  sc.timing = Timing::Native;
  auto r = run(sc);
  REQUIRE(r.metrics.counters.failures == 0);
  for (const auto& m : r.metrics.requests) {
    CHECK(m.ttfb_ms >= 10.0);
    CHECK(m.ttfb_ms <= m.completion_ms);
  }
  CHECK(r.metrics.counters.exit_cpu_us > 0);
}

TEST_CASE("every mode fetches the published bytes")
{
  Scenario sc;
  sc.workload = {{"https://sim.example/a", 3000, client::Mode::direct(), 2, 4},
                 {"https://sim.example/b", 70'000, client::Mode::routed(2), 2, 1},
                 {"https://sim.example/c", 1, client::Mode::spoofed_direct(2), 2, 4}};
  auto r = run(sc);
  CHECK(r.metrics.counters.requests == 6);
  CHECK(r.metrics.counters.failures == 0);
  std::set<std::string> modes;
  for (const auto& m : r.metrics.requests)
    modes.insert(m.mode);
  CHECK(modes == std::set<std::string>{"direct", "routed:2", "spoofed_direct:2"});
}

TEST_CASE("a client without enough peers is recorded as a failure, not thrown")
{
  Scenario sc;
  sc.clients = 2;
  sc.workload = {{"https://sim.example/a", 100, client::Mode::routed(3), 1}};
  auto r = run(sc);
  REQUIRE(r.metrics.requests.size() == 1);
  CHECK_FALSE(r.metrics.requests[0].ok);
  CHECK(r.metrics.requests[0].status.starts_with("client-error"));
  CHECK(r.metrics.counters.failures == 1);
}

TEST_CASE("adversary view holds no url or content")
{
  Scenario sc;
  sc.workload = {{"https://secret.example/planted-path", 5000, client::Mode::direct(), 3, 2},
                 {"https://secret.example/other", 100, client::Mode::routed(2), 2}};
  auto r = run(sc);
  auto all = r.adversary.concatenated();
  REQUIRE(!all.empty());
  CHECK_FALSE(contains(all, "planted-path"));
  CHECK_FALSE(contains(all, "secret.example"));
  for (const auto& [url, bytes] : r.content) {
    auto probe = std::string(bytes.begin(), bytes.begin() + std::min<std::size_t>(32, bytes.size()));
    if (probe.size() == 32)
      CHECK_FALSE(contains(all, probe));
  }
}

TEST_CASE("linkability from cache logs and from a compromised exit")
{
  Scenario sc;
  sc.workload = {{"https://sim.example/d", 500, client::Mode::direct(), 20},
                 {"https://sim.example/s", 500, client::Mode::spoofed_direct(2), 20},
                 {"https://sim.example/r", 500, client::Mode::routed(2), 20}};
  auto r = run(sc);
  REQUIRE(r.metrics.counters.failures == 0);

  auto logs = linkability_analysis(r.adversary, r.truth, exit_addresses(sc));
  CHECK(logs.requests == 60);
  CHECK(logs.unique_identification_rate == 0.0);

  auto split = [&](const std::string& mode) {
    GroundTruth t;
    for (const auto& m : r.metrics.requests)
      if (m.mode == mode)
        t.originator[m.request_id] = m.originator;
    return linkability_analysis(r.exit_view, t);
  };
  auto direct = split("direct");
  CHECK(direct.requests == 20);
  CHECK(direct.unique_identification_rate == 1.0);
  auto spoofed = split("spoofed_direct:2");
  CHECK(spoofed.min_candidates == 3);
  CHECK(spoofed.max_candidates == 3);
  CHECK(spoofed.unique_identification_rate == 0.0);
  CHECK(spoofed.uniform_guess_rate == doctest::Approx(1.0 / 3));
  auto routed = split("routed:2");
  CHECK(routed.min_candidates == 3);
}

TEST_CASE("popularity: uniform stays flat, zipf is skewed, flattening evens it out")
{
  Scenario uniform;
  uniform.flashcrowd.enabled = false;
  uniform.zipf = ZipfSpec{20, 0.0, 10'000};
  auto u = popularity_analysis(run(uniform).adversary);
  CHECK(u.share.size() == 20);
  CHECK(u.flatness_ratio <= 2.0);

  Scenario zipf = uniform;
  zipf.zipf->exponent = 1.0;
  auto skewed = popularity_analysis(run(zipf).adversary);
  auto shares = zipf_shares(20, 1.0);
  double analytic = shares.front() / shares.back();
  CHECK(analytic == doctest::Approx(20.0));
  CHECK(skewed.flatness_ratio > 0.6 * analytic);
  CHECK(skewed.flatness_ratio < 1.6 * analytic);

  zipf.zipf->flatten = true;
  auto flat = popularity_analysis(run(zipf).adversary);
  CHECK(flat.share.size() > 20);
  CHECK(flat.flatness_ratio <= 0.25 * skewed.flatness_ratio);
}

TEST_CASE("flashcrowd burst stays at the exit")
{
  Scenario sc;
  sc.exits = 1;
  sc.interval_ms = 10;
  sc.workload = {{"https://sim.example/hot", 2048, client::Mode::direct(), 3000}};
  auto r = run(sc);
  CHECK(r.metrics.counters.failures == 0);
  CHECK(r.metrics.counters.cache_gets < 3000 / 5);
  CHECK(r.metrics.counters.flashcrowd_hits > 2000);
}

TEST_CASE("surge sizes follow the body/tail mix")
{
  SurgeSpec spec;
  spec.objects = 20'000;
  SeededRandom a(3, "surge"), b(3, "surge");
  auto sizes = surge_sizes(spec, a);
  CHECK(sizes == surge_sizes(spec, b));
  std::size_t tail = 0;
  for (auto s : sizes) {
    CHECK(s >= 1);
    CHECK(s <= spec.max_size);
    if (s > 64 * 1024)
      ++tail;
  }
  double frac = double(tail) / double(sizes.size());
  CHECK(frac > 0.17);
  CHECK(frac < 0.23);
}

TEST_CASE("surge workload runs end to end")
{
  Scenario sc;
  sc.surge = SurgeSpec{15, 40};
  sc.surge->max_size = 512 * 1024;
  auto r = run(sc);
  CHECK(r.metrics.counters.requests == 40);
  CHECK(r.metrics.counters.failures == 0);
}

TEST_CASE("scenario json")
{
  auto sc = Scenario::from_json(R"({
    "caches": 1, "exits": 2, "clients": 4, "alpha_ms": 25, "seed": 9, "timing": "virtual",
    "flashcrowd": {"enabled": false},
    "cost": {"link_ms": 2},
    "workload": [{"url": "https://a.example/x", "size": 10, "mode": "routed:2", "count": 3}],
    "zipf": {"urls": 10, "requests": 100, "flatten": true}
  })");
  CHECK(sc.caches == 1);
  CHECK(sc.exits == 2);
  CHECK(sc.alpha_ms == 25);
  CHECK(sc.seed == 9);
  CHECK_FALSE(sc.flashcrowd.enabled);
  CHECK(sc.cost.link_ms == 2);
  REQUIRE(sc.workload.size() == 1);
  CHECK(sc.workload[0].mode == client::Mode::routed(2));
  REQUIRE(sc.zipf);
  CHECK(sc.zipf->flatten);
  CHECK(Scenario::from_json(sc.to_json()).to_json() == sc.to_json());

  CHECK_THROWS_AS(Scenario::from_json(R"({"cachez": 1})"), MalformedError);
  CHECK_THROWS_AS(Scenario::from_json(R"({"cost": {"speed": 1}})"), MalformedError);
  CHECK_THROWS_AS(Scenario::from_json(R"({"workload": [{"url": "x"}]})"), MalformedError);
  CHECK_THROWS_AS(Scenario::from_json(R"({"workload": [{"url": "https://a/b", "mode": "fast"}]})"),
                  Error);
  CHECK_THROWS_AS(Scenario::from_json("[1]"), MalformedError);
  CHECK_THROWS_AS(Scenario::from_json(R"({"clients": 0})"), MalformedError);
}

TEST_CASE("outputs and ops breakdown")
{
  auto sc = sized({1024, 100 * 1024, 1024 * 1024}, 3);
  auto r = run(sc);
  auto dir = std::filesystem::temp_directory_path() / "ocdn-sim-outputs";
  std::filesystem::remove_all(dir);
  write_outputs(r, exit_addresses(sc), dir);
  for (auto name : {"metrics.csv", "ops.csv", "summary.json", "adversary.json"})
    CHECK(std::filesystem::exists(dir / name));
  CHECK(slurp(dir / "metrics.csv") == r.metrics.metrics_csv());
  auto ops = slurp(dir / "ops.csv");
  for (auto op : metrics::kAllOps)
    CHECK(ops.find(std::string(metrics::to_string(op))) != std::string::npos);
  CHECK(slurp(dir / "adversary.json").find("\"unique_identification_rate\": 0.0") !=
        std::string::npos);

  // Content-size operations are modeled per byte; the others are fixed.
  std::map<std::pair<metrics::Op, std::uint64_t>, double> modeled;
  for (const auto& o : r.metrics.ops)
    modeled[{o.op, o.bytes}] = o.modeled_ms;
  for (auto op : {metrics::Op::SharedKeyDecrypt, metrics::Op::SessionKeyEncrypt,
                  metrics::Op::ClientDecrypt}) {
    double prev = -1;
    for (const auto& [key, ms] : modeled)
      if (key.first == op) {
        CHECK(ms > prev);
        prev = ms;
      }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("scalability curve reports per-request exit cost")
{
  auto curve = scalability_curve({2, 6}, 10, 1);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].first == 2);
  for (auto [clients, us] : curve)
    CHECK(us > 0);
}
