#pragma once

// In-process testbed: every role on one LocalNetwork and one manual clock, with a
// latency model applied to the observed transmissions.

#include "ocdn/cachenode.hpp"
#include "ocdn/clientproxy.hpp"
#include "ocdn/metrics.hpp"
#include "ocdn/publisher.hpp"

#include <filesystem>

namespace ocdn::sim {

enum class Timing
{
  Virtual, // modeled latencies, deterministic
  Native,  // steady-clock measurement with real sleeps for the client-exit delay
};

/// Latency and cost model for virtual runs. All durations in milliseconds.
struct CostModel
{
  double link_ms = 5.0;                       // one-way propagation between any two nodes
  double bandwidth_bytes_per_ms = 12'500.0;   // 100 Mbit/s
  double key_rtt_ms = 20.0;                   // exit to key server and back
  double rsa_private_ms = 1.5;
  double rsa_public_ms = 0.05;
  double aes_ms_per_mib = 1.0;
  double hmac_ms = 0.005;
  double lookup_ms = 0.01;

  double transfer(std::uint64_t bytes) const { return double(bytes) / bandwidth_bytes_per_ms; }
  double aes(std::uint64_t bytes) const { return aes_ms_per_mib * double(bytes) / 1048576.0; }
};

struct WorkloadItem
{
  std::string url;
  std::uint64_t size = 1024;
  client::Mode mode = client::Mode::direct();
  std::uint32_t count = 1;
  std::uint32_t encodings = 0; // 0: scenario default
};

/// Zipf popularity over `urls` objects of equal size.
struct ZipfSpec
{
  unsigned urls = 100;
  double exponent = 1.0;
  std::uint64_t requests = 50'000;
  std::uint64_t size = 1024;
  bool flatten = false; // choose encoding counts from the analytic shares
  std::uint32_t cap = 16;
  client::Mode mode = client::Mode::direct();
};

/// Heavy-tailed web corpus: 80% lognormal bodies up to 64 KiB, 20% Pareto tail.
struct SurgeSpec
{
  unsigned objects = 50;
  std::uint64_t requests = 200;
  double lognormal_mu = 8.5;    // median about 5 KiB
  double lognormal_sigma = 1.2;
  double pareto_shape = 1.2;
  std::uint64_t pareto_min = 64 * 1024;
  std::uint64_t max_size = 4 * 1024 * 1024;
  client::Mode mode = client::Mode::direct();
};

struct Scenario
{
  int caches = 2;
  int exits = 3;
  int clients = 6;
  unsigned virtual_points = 64;
  unsigned replication = 1;
  double alpha_ms = 0.0; // extra one-way delay on every client-exit link
  std::int64_t interval_ms = 10;
  Timing timing = Timing::Virtual;
  std::uint32_t encodings = 1;
  std::int64_t key_lifetime_s = 86'400;
  exitproxy::FlashcrowdConfig flashcrowd{};
  CostModel cost{};
  std::vector<WorkloadItem> workload;
  std::optional<ZipfSpec> zipf;
  std::optional<SurgeSpec> surge;
  std::uint64_t seed = 1;

  /// Unknown keys are rejected. Modes use Mode::parse syntax ("routed:2").
  static Scenario from_json(std::string_view text);
  std::string to_json() const;
};

// ---------------------------------------------------------------------------
// Results

struct RequestMetric
{
  std::uint64_t seq = 0;
  std::string request_id; // hex
  std::string url;
  std::uint64_t size = 0;
  std::string mode;
  std::string originator;
  std::string exit;
  std::string status;
  bool ok = false;
  double ttfb_ms = 0.0;
  double completion_ms = 0.0;
};

struct OpMetric
{
  std::string request_id;
  metrics::Op op;
  std::uint64_t bytes = 0;
  double modeled_ms = 0.0;
  double native_us = 0.0;
};

struct Counters
{
  std::uint64_t requests = 0;
  std::uint64_t failures = 0;
  std::uint64_t cache_gets = 0;
  std::uint64_t key_fetches = 0;
  std::uint64_t flashcrowd_hits = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t transmissions = 0;
  double exit_cpu_us = 0.0; // native time spent inside exit request handling
};

struct Metrics
{
  std::vector<RequestMetric> requests; // ordered by seq
  std::vector<OpMetric> ops;           // ordered by (seq, op)
  Counters counters;

  /// request_id,url,size,mode,ttfb_ms,completion_ms
  std::string metrics_csv() const;
  /// request_id,op,bytes,modeled_ms,native_us
  std::string ops_csv() const;
  std::string summary_json() const;
};

/// What a compromised CDN holds: every cache node's access log and stored bytes.
class AdversaryView
{
public:
  struct NodeView
  {
    std::string name;
    std::vector<cache::AccessLogRecord> log;
    std::vector<cache::CacheEntry> entries;
    Bytes stored; // everything the node keeps on disk
  };

  explicit AdversaryView(std::vector<NodeView> nodes = {}) : m_nodes(std::move(nodes)) {}

  const std::vector<NodeView>& nodes() const { return m_nodes; }
  /// Log lines and stored envelopes of every node, concatenated.
  Bytes concatenated() const;

private:
  std::vector<NodeView> m_nodes;
};

/// What a compromised exit proxy sees of each request it handles.
class ExitView
{
public:
  explicit ExitView(std::vector<exitproxy::Observation> seen = {}) : m_seen(std::move(seen)) {}
  const std::vector<exitproxy::Observation>& observations() const { return m_seen; }

private:
  std::vector<exitproxy::Observation> m_seen;
};

/// Harness bookkeeping used only to score adversary guesses.
struct GroundTruth
{
  struct LogRef
  {
    std::size_t node = 0;
    std::size_t record = 0;
  };

  std::map<std::string, std::string> originator;             // request hex -> client address
  std::map<std::string, std::vector<LogRef>> cache_records;  // request hex -> log lines it caused
};

struct RunResult
{
  Metrics metrics;
  AdversaryView adversary;
  ExitView exit_view;
  GroundTruth truth;
  std::map<std::string, Bytes> content; // url -> published bytes
};

/// Runs the scenario's workload through the full oblivious path.
RunResult run(const Scenario& scenario);
/// Same workload fetched as plaintext straight from a cache node.
Metrics baseline_run(const Scenario& scenario);

// ---------------------------------------------------------------------------
// Analyses

struct PopularityReport
{
  std::map<std::string, double> share; // id hex -> fraction of GETs
  double max_share = 0.0;
  double min_share = 0.0;
  double flatness_ratio = 0.0; // max / min over ids that were requested

  std::string to_json() const;
};

PopularityReport popularity_analysis(const AdversaryView& view);

struct LinkabilityReport
{
  std::size_t requests = 0;
  double unique_identification_rate = 0.0;
  double mean_candidates = 0.0;
  std::size_t min_candidates = 0;
  std::size_t max_candidates = 0;
  double uniform_guess_rate = 0.0; // expected success when guessing uniformly in the set

  std::string to_json() const;
};

/// Guesses from cache logs alone: candidates are the log peers that are not known exits.
LinkabilityReport linkability_analysis(const AdversaryView& view, const GroundTruth& truth,
                                       const std::vector<std::string>& exit_addresses);
/// Guesses as a compromised exit: candidates are the non-terminal route members.
LinkabilityReport linkability_analysis(const ExitView& view, const GroundTruth& truth);

// ---------------------------------------------------------------------------
// Workload helpers and figure data

/// Surge-like object sizes, deterministic for a given generator state.
std::vector<std::uint64_t> surge_sizes(const SurgeSpec& spec, RandomSource& rng);

/// Analytic Zipf shares for ranks 1..n.
std::vector<double> zipf_shares(unsigned n, double exponent);

/// Writes metrics.csv, ops.csv, summary.json and adversary.json.
void write_outputs(const RunResult& result, const std::vector<std::string>& exit_addresses,
                   const std::filesystem::path& dir);

/// Exit addresses the deployment for this scenario uses.
std::vector<std::string> exit_addresses(const Scenario& scenario);

/// Per-figure CSVs: ttfb.csv, completion.csv, latency.csv, overhead.csv, scalability.csv.
void write_plotdata(std::uint64_t seed, const std::filesystem::path& dir);

/// Native exit CPU time per request for each client count.
std::vector<std::pair<int, double>> scalability_curve(const std::vector<int>& client_counts,
                                                      std::uint64_t requests_per_point,
                                                      std::uint64_t seed);

} // namespace ocdn::sim
