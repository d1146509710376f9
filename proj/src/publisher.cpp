#include "ocdn/publisher.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>

namespace ocdn::publisher {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(Participation p)
{
  switch (p) {
  case Participation::EncryptedOnly:
    return "encrypted";
  case Participation::PlaintextOnly:
    return "plaintext";
  case Participation::Both:
    return "both";
  }
  return "encrypted";
}

Participation participation_from_string(std::string_view text)
{
  if (text == "encrypted")
    return Participation::EncryptedOnly;
  if (text == "plaintext")
    return Participation::PlaintextOnly;
  if (text == "both")
    return Participation::Both;
  throw MalformedError("unknown participation '" + std::string(text) + "'");
}

namespace {

Bytes read_file(const fs::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_private(const fs::path& path, ByteView data)
{
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  }
  fs::permissions(path, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
}

} // namespace

PublishPlan PublishPlan::from_json(std::string_view text, const fs::path& base_dir)
{
  PublishPlan plan;
  try {
    auto j = json::parse(text);
    auto cap = j.value("max_encodings", core::kDefaultMaxEncodings);
    for (const auto& o : j.at("objects")) {
      PlanObject obj{core::CanonicalUrl::parse(o.at("url").get<std::string>()), {}};
      if (o.contains("file"))
        obj.content = read_file(base_dir / o.at("file").get<std::string>());
      else {
        auto text = o.at("text").get<std::string>();
        obj.content = Bytes(text.begin(), text.end());
      }
      obj.encodings = o.value("encodings", 1u);
      obj.participation = participation_from_string(o.value("participation", "encrypted"));
      if (obj.encodings < 1 || obj.encodings > cap)
        throw RangeError("encodings out of range for " + obj.url.text());
      plan.objects.push_back(std::move(obj));
    }
    if (j.contains("popularity")) {
      std::map<core::CanonicalUrl, double> shares;
      for (const auto& [url, share] : j.at("popularity").items())
        shares[core::CanonicalUrl::parse(url)] = share.get<double>();
      auto counts = choose_encoding_counts(shares, cap);
      for (auto& obj : plan.objects)
        if (auto it = counts.find(obj.url); it != counts.end())
          obj.encodings = it->second;
    }
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("bad plan: ") + e.what());
  }
  return plan;
}

bool PublishReport::complete() const
{
  for (const auto& p : pushes)
    if (p.stored_on.empty())
      return false;
  return true;
}

std::string PublishReport::to_json() const
{
  json out = json::array();
  for (const auto& p : pushes) {
    json failed = json::object();
    for (const auto& [target, why] : p.failed)
      failed[target] = why;
    out.push_back({{"url", p.url.text()},
                   {"encoding", p.index},
                   {"id", p.id.hex()},
                   {"stored_on", p.stored_on},
                   {"failed", failed}});
  }
  return json{{"pushes", out}, {"complete", complete()}}.dump(2);
}

std::string PartialRotation::join(const std::vector<std::string>& v)
{
  std::string out;
  for (const auto& s : v)
    out += (out.empty() ? "" : ", ") + s;
  return out;
}

// ---------------------------------------------------------------------------

Origin::Origin(core::KeyPair keys, const Clock& clock, RandomSource& rng, OriginConfig config)
  : m_keys(std::move(keys))
  , m_clock(clock)
  , m_rng(rng)
  , m_config(config)
{
}

void Origin::set_targets(std::vector<Target> targets)
{
  std::lock_guard lock(m_mutex);
  m_targets = std::move(targets);
}

std::vector<std::string> Origin::target_names() const
{
  std::lock_guard lock(m_mutex);
  std::vector<std::string> names;
  for (const auto& t : m_targets)
    names.push_back(t->name());
  return names;
}

void Origin::add_targets_locked(const std::vector<Target>& targets)
{
  for (const auto& t : targets)
    if (std::find(m_targets.begin(), m_targets.end(), t) == m_targets.end())
      m_targets.push_back(t);
}

const core::SharedKey& Origin::key_locked(const std::string& prefix)
{
  auto it = m_shared.find(prefix);
  if (it == m_shared.end())
    it = m_shared
           .emplace(prefix, core::SharedKey::generate(m_rng, m_clock.now_seconds(),
                                                      m_config.key_lifetime_s))
           .first;
  return it->second;
}

void Origin::push_object_locked(Object& obj, PublishReport& report,
                                const std::vector<Target>& targets)
{
  const auto& plan = obj.plan;
  if (plan.plaintext()) {
    for (const auto& t : targets) {
      try {
        t->put_plain(plan.url.text(), plan.content);
      }
      catch (const TransportError& e) {
        report.plaintext_failed.emplace_back(t->name(), e.what());
      }
    }
  }
  obj.ids.clear();
  if (!plan.encrypted())
    return;

  const auto& key = key_locked(prefix_of(plan.url));
  for (std::uint32_t i = 0; i < plan.encodings; ++i) {
    PushResult result{plan.url, i, core::derive_obfuscated_id(key, plan.url, i, m_config.max_encodings),
                      {}, {}};
    // Each encoding gets its own salt so copies cannot be linked by ciphertext.
    auto env = core::seal_content(key, plan.content, m_rng);
    auto sig = core::sign_update(m_keys, result.id, env);
    for (const auto& t : targets) {
      try {
        auto status = t->put(result.id, env, m_keys.public_key(), sig);
        if (net::accepted(status))
          result.stored_on.push_back(t->name());
        else
          result.failed.emplace_back(t->name(), std::string(net::to_string(status)));
      }
      catch (const TransportError& e) {
        result.failed.emplace_back(t->name(), e.what());
      }
    }
    obj.ids.push_back(result.id);
    report.pushes.push_back(std::move(result));
  }
}

PublishReport Origin::publish(const PublishPlan& plan)
{
  std::lock_guard lock(m_mutex);
  add_targets_locked(plan.targets);
  if (m_targets.empty())
    throw RangeError("publish needs at least one cache target");
  PublishReport report;
  for (const auto& po : plan.objects) {
    if (po.encodings < 1 || po.encodings > m_config.max_encodings)
      throw RangeError("encodings out of range for " + po.url.text());
    auto& obj = m_objects[po.url];
    obj.plan = po;
    push_object_locked(obj, report, m_targets);
  }
  if (!report.complete())
    throw PublishError("some encodings were not stored on any target", report);
  return report;
}

PublishReport Origin::update_content(const core::CanonicalUrl& url, Bytes content)
{
  std::lock_guard lock(m_mutex);
  auto it = m_objects.find(url);
  if (it == m_objects.end())
    throw RangeError("not published: " + url.text());
  it->second.plan.content = std::move(content);
  PublishReport report;
  push_object_locked(it->second, report, m_targets);
  if (!report.complete())
    throw PublishError("update was not stored on any target", report);
  return report;
}

core::SharedKey Origin::rotate_locked(const std::string& prefix)
{
  auto fresh = core::SharedKey::generate(m_rng, m_clock.now_seconds(), m_config.key_lifetime_s);
  m_shared.insert_or_assign(prefix, fresh);

  std::set<std::string> unpushed;
  for (auto& [url, obj] : m_objects) {
    if (prefix_of(url) != prefix || !obj.plan.encrypted())
      continue;
    PublishReport report;
    push_object_locked(obj, report, m_targets);
    bool missed = false;
    for (const auto& p : report.pushes)
      for (const auto& [target, why] : p.failed) {
        unpushed.insert(target);
        missed = true;
      }
    if (missed)
      m_pending.insert(url);
  }
  if (!unpushed.empty())
    throw PartialRotation({unpushed.begin(), unpushed.end()}, fresh);
  return fresh;
}

core::SharedKey Origin::rotate_key(const core::CanonicalUrl& url)
{
  std::lock_guard lock(m_mutex);
  return rotate_locked(prefix_of(url));
}

void Origin::repush_pending()
{
  std::lock_guard lock(m_mutex);
  std::set<core::CanonicalUrl> still;
  for (const auto& url : m_pending) {
    auto it = m_objects.find(url);
    if (it == m_objects.end())
      continue;
    PublishReport report;
    push_object_locked(it->second, report, m_targets);
    for (const auto& p : report.pushes)
      if (!p.failed.empty())
        still.insert(url);
  }
  m_pending = std::move(still);
}

std::optional<keydist::KeyGrant> Origin::lookup(const core::CanonicalUrl& url)
{
  std::lock_guard lock(m_mutex);
  auto it = m_objects.find(url);
  if (it == m_objects.end() || !it->second.plan.encrypted())
    return std::nullopt;
  auto prefix = prefix_of(url);
  const core::SharedKey* key = &key_locked(prefix);
  if (m_config.rotate_on_expired_lookup && key->expired_at(m_clock.now_seconds())) {
    try {
      rotate_locked(prefix);
    }
    catch (const PartialRotation&) {
      // the new key is installed; missed targets are retried by repush_pending()
    }
    key = &m_shared.at(prefix);
  }
  return keydist::KeyGrant{prefix, *key, it->second.plan.encodings};
}

std::optional<core::SharedKey> Origin::key_for(const core::CanonicalUrl& url) const
{
  std::lock_guard lock(m_mutex);
  auto it = m_shared.find(prefix_of(url));
  if (it == m_shared.end())
    return std::nullopt;
  return it->second;
}

std::vector<core::ObfuscatedId> Origin::published_ids(const core::CanonicalUrl& url) const
{
  std::lock_guard lock(m_mutex);
  auto it = m_objects.find(url);
  return it == m_objects.end() ? std::vector<core::ObfuscatedId>{} : it->second.ids;
}

std::uint32_t Origin::encodings_of(const core::CanonicalUrl& url) const
{
  std::lock_guard lock(m_mutex);
  auto it = m_objects.find(url);
  return it == m_objects.end() ? 0 : it->second.plan.encodings;
}

std::vector<core::CanonicalUrl> Origin::urls() const
{
  std::lock_guard lock(m_mutex);
  std::vector<core::CanonicalUrl> out;
  for (const auto& [url, obj] : m_objects)
    out.push_back(url);
  return out;
}

// Layout: origin.der, state.json, objects/<sha256(url) hex>
void Origin::save(const fs::path& dir) const
{
  std::lock_guard lock(m_mutex);
  fs::create_directories(dir / "objects");
  fs::permissions(dir, fs::perms::owner_all, fs::perm_options::replace);
  write_private(dir / "origin.der", m_keys.private_der());

  json keys = json::object();
  for (const auto& [prefix, key] : m_shared)
    keys[prefix] = {{"key", to_base64(key.bytes())},
                    {"created_at", key.created_at()},
                    {"expires_at", key.expires_at()}};
  json objects = json::array();
  for (const auto& [url, obj] : m_objects) {
    auto file = to_hex(core::sha256(as_bytes(url.text())));
    write_private(dir / "objects" / file, obj.plan.content);
    objects.push_back({{"url", url.text()},
                       {"encodings", obj.plan.encodings},
                       {"participation", to_string(obj.plan.participation)},
                       {"file", file}});
  }
  std::string text = json{{"keys", keys}, {"objects", objects}}.dump(2);
  write_private(dir / "state.json", as_bytes(text));
}

std::unique_ptr<Origin> Origin::load(const fs::path& dir, const Clock& clock, RandomSource& rng,
                                     OriginConfig config)
{
  auto origin = std::make_unique<Origin>(core::KeyPair::from_private_der(read_file(dir / "origin.der")),
                                         clock, rng, config);
  try {
    auto j = json::parse(ocdn::to_string(read_file(dir / "state.json")));
    for (const auto& [prefix, k] : j.at("keys").items())
      origin->m_shared.emplace(prefix, core::SharedKey::from_bytes(
                                         from_base64(k.at("key").get<std::string>()),
                                         k.at("created_at").get<std::int64_t>(),
                                         k.at("expires_at").get<std::int64_t>()));
    for (const auto& o : j.at("objects")) {
      Object obj;
      obj.plan.url = core::CanonicalUrl::parse(o.at("url").get<std::string>());
      obj.plan.encodings = o.at("encodings").get<std::uint32_t>();
      obj.plan.participation = participation_from_string(o.at("participation").get<std::string>());
      obj.plan.content = read_file(dir / "objects" / o.at("file").get<std::string>());
      if (obj.plan.encrypted()) {
        const auto& key = origin->m_shared.at(prefix_of(obj.plan.url));
        for (std::uint32_t i = 0; i < obj.plan.encodings; ++i)
          obj.ids.push_back(core::derive_obfuscated_id(key, obj.plan.url, i, config.max_encodings));
      }
      origin->m_objects.emplace(obj.plan.url, std::move(obj));
    }
  }
  catch (const json::exception& e) {
    throw MalformedError(std::string("bad origin state: ") + e.what());
  }
  return origin;
}

// ---------------------------------------------------------------------------

std::map<core::CanonicalUrl, std::uint32_t>
choose_encoding_counts(const std::map<core::CanonicalUrl, double>& popularity, std::uint32_t cap)
{
  if (popularity.empty())
    throw RangeError("popularity map is empty");
  if (cap < 1)
    throw RangeError("encoding cap must be at least 1");
  double sum = 0.0;
  double min_positive = 0.0;
  for (const auto& [url, share] : popularity) {
    if (!(share >= 0.0))
      throw RangeError("negative share for " + url.text());
    sum += share;
    if (share > 0.0 && (min_positive == 0.0 || share < min_positive))
      min_positive = share;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw RangeError("shares must sum to 1");

  std::map<core::CanonicalUrl, std::uint32_t> counts;
  for (const auto& [url, share] : popularity) {
    double ratio = share > 0.0 ? std::round(share / min_positive) : 1.0;
    counts[url] = static_cast<std::uint32_t>(std::clamp(ratio, 1.0, double(cap)));
  }
  return counts;
}

} // namespace ocdn::publisher
