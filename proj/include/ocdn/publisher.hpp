#pragma once

#include "ocdn/keydist.hpp"

#include <filesystem>
#include <set>

namespace ocdn::publisher {

enum class Participation
{
  EncryptedOnly,
  PlaintextOnly,
  Both,
};

std::string_view to_string(Participation p);
Participation participation_from_string(std::string_view text);

struct PlanObject
{
  core::CanonicalUrl url;
  Bytes content;
  std::uint32_t encodings = 1;
  Participation participation = Participation::EncryptedOnly;

  bool encrypted() const { return participation != Participation::PlaintextOnly; }
  bool plaintext() const { return participation != Participation::EncryptedOnly; }
};

using Target = std::shared_ptr<net::CacheEndpoint>;

struct PublishPlan
{
  std::vector<PlanObject> objects;
  std::vector<Target> targets;

  /// Plan file:
  ///   {"max_encodings": 16,
  ///    "popularity": {"<url>": share, ...},            optional, overrides "encodings"
  ///    "objects": [{"url": "...", "file": "relative/path" | "text": "...",
  ///                 "encodings": 1, "participation": "encrypted|plaintext|both"}]}
  /// Relative file paths resolve against `base_dir`. Targets are supplied separately.
  static PublishPlan from_json(std::string_view text, const std::filesystem::path& base_dir);
};

struct PushResult
{
  core::CanonicalUrl url;
  std::uint32_t index = 0;
  core::ObfuscatedId id;
  std::vector<std::string> stored_on;
  std::vector<std::pair<std::string, std::string>> failed; // (target, reason)
};

struct PublishReport
{
  std::vector<PushResult> pushes;
  std::vector<std::pair<std::string, std::string>> plaintext_failed;

  /// Every (url, encoding) landed on at least one target.
  bool complete() const;
  std::string to_json() const;
};

class PublishError : public Error
{
public:
  PublishError(std::string what, PublishReport report)
    : Error(std::move(what))
    , report(std::move(report))
  {
  }

  PublishReport report;
};

/// Rotation swapped the key but some re-pushes failed; those targets still hold old entries.
class PartialRotation : public Error
{
public:
  PartialRotation(std::vector<std::string> nodes, core::SharedKey key)
    : Error("rotation incomplete on: " + join(nodes))
    , unpushed_nodes(std::move(nodes))
    , new_key(std::move(key))
  {
  }

  std::vector<std::string> unpushed_nodes;
  core::SharedKey new_key;

private:
  static std::string join(const std::vector<std::string>& v);
};

struct OriginConfig
{
  std::int64_t key_lifetime_s = 86'400;
  std::uint32_t max_encodings = core::kDefaultMaxEncodings;
  /// Rotate expired keys when a key query arrives for them.
  bool rotate_on_expired_lookup = true;
};

/// An origin server: owns its signing key, per-prefix shared keys, and what it has published.
class Origin final : public keydist::KeySource
{
public:
  Origin(core::KeyPair keys, const Clock& clock, RandomSource& rng, OriginConfig config = {});

  const core::KeyPair& keypair() const { return m_keys; }
  const OriginConfig& config() const { return m_config; }

  /// Targets used for updates and rotations. publish() adds the plan's targets.
  void set_targets(std::vector<Target> targets);
  std::vector<std::string> target_names() const;

  /// Throws PublishError when some (url, encoding) reached no target.
  PublishReport publish(const PublishPlan& plan);
  /// Re-seals under the current key; ids stay the same.
  PublishReport update_content(const core::CanonicalUrl& url, Bytes content);
  /// New key for the url's prefix; every object under it is re-derived, re-sealed and re-pushed.
  /// Throws PartialRotation if a target missed a push.
  core::SharedKey rotate_key(const core::CanonicalUrl& url);
  /// Retries pushes a previous rotation could not complete.
  void repush_pending();

  std::optional<keydist::KeyGrant> lookup(const core::CanonicalUrl& url) override;

  std::optional<core::SharedKey> key_for(const core::CanonicalUrl& url) const;
  std::vector<core::ObfuscatedId> published_ids(const core::CanonicalUrl& url) const;
  std::uint32_t encodings_of(const core::CanonicalUrl& url) const;
  std::vector<core::CanonicalUrl> urls() const;

  /// Key directory: private key, shared keys, and object contents. Files are owner-only.
  void save(const std::filesystem::path& dir) const;
  static std::unique_ptr<Origin> load(const std::filesystem::path& dir, const Clock& clock,
                                      RandomSource& rng, OriginConfig config = {});

private:
  struct Object
  {
    PlanObject plan;
    std::vector<core::ObfuscatedId> ids;
  };

  static std::string prefix_of(const core::CanonicalUrl& url) { return url.origin(); }
  const core::SharedKey& key_locked(const std::string& prefix);
  void push_object_locked(Object& obj, PublishReport& report, const std::vector<Target>& targets);
  core::SharedKey rotate_locked(const std::string& prefix);
  void add_targets_locked(const std::vector<Target>& targets);

  core::KeyPair m_keys;
  const Clock& m_clock;
  RandomSource& m_rng;
  OriginConfig m_config;

  mutable std::mutex m_mutex;
  std::map<std::string, core::SharedKey> m_shared;
  std::map<core::CanonicalUrl, Object> m_objects;
  std::vector<Target> m_targets;
  std::set<core::CanonicalUrl> m_pending;
};

/// n_i = clamp(round(share_i / smallest positive share), 1, cap).
/// Throws RangeError on an empty map, negative shares, or shares not summing to 1.
std::map<core::CanonicalUrl, std::uint32_t>
choose_encoding_counts(const std::map<core::CanonicalUrl, double>& popularity,
                       std::uint32_t cap = core::kDefaultMaxEncodings);

} // namespace ocdn::publisher
