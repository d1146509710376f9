#include "node_config.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ocdn::cli {

const std::vector<ConfigKey>& config_schema()
{
  using T = ValueType;
  static const std::vector<ConfigKey> schema{
    {"role", T::String, "", "cache | exit | keydist | client | publisher"},
    {"listen", T::String, "", "host:port to serve on"},
    {"roster", T::String, "", "signed roster file"},
    {"authority_pub", T::String, "", "pinned roster authority public key (DER)"},
    {"authority_key", T::String, "", "roster authority private key (DER)"},
    {"key", T::String, "", "this node's private key (DER)"},
    {"keys_dir", T::String, "", "origin key directory"},
    {"targets", T::String, "", "file listing cache node addresses"},
    {"caches", T::List, "", "cache node addresses"},
    {"key_servers", T::List, "", "key servers as prefix=host:port or host:port"},
    {"peers", T::String, "", "file of seed peer addresses"},
    {"mode", T::String, "direct", "direct | routed:N | spoofed_direct:N"},
    {"virtual_points", T::Integer, "64", "ring points per exit"},
    {"replication", T::Integer, "1", "ring owners per position"},
    {"key_cache_ttl_s", T::Integer, "300", "exit key cache lifetime"},
    {"key_lifetime_s", T::Integer, "86400", "origin shared key lifetime"},
    {"max_encodings", T::Integer, "16", "upper bound on encodings per url"},
    {"flashcrowd_enabled", T::Boolean, "true", "exit-local copies of hot objects"},
    {"flashcrowd_threshold_rps", T::Real, "50", "requests per second that make an id hot"},
    {"flashcrowd_window_ms", T::Integer, "10000", "rate window"},
    {"flashcrowd_ttl_ms", T::Integer, "30000", "lifetime of an exit-local copy"},
    {"peer_inactivity_ms", T::Integer, "120000", "peers silent this long are dropped"},
    {"announce_interval_ms", T::Integer, "30000", "membership refresh period"},
    {"cache_capacity_bytes", T::Integer, "1073741824", "cache node storage bound"},
    {"strict_allowlist", T::Boolean, "false", "refuse origins not in trusted_origins"},
    {"trusted_origins", T::List, "", "origin public key files (DER)"},
    {"request_timeout_ms", T::Integer, "30000", "client wait for a delivery"},
  };
  return schema;
}

const ConfigKey* find_key(std::string_view name)
{
  for (const auto& k : config_schema())
    if (k.name == name)
      return &k;
  return nullptr;
}

namespace {

std::string trim(std::string_view s)
{
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  return b == std::string_view::npos ? std::string() : std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view text)
{
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    auto item = trim(text.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (!item.empty())
      out.push_back(item);
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return out;
}

std::string normalize(const ConfigKey& key, std::string value)
{
  auto fail = [&](const char* what) {
    throw ConfigError(key.name + ": expected " + what + ", got '" + value + "'");
  };
  if (value.find_first_of("\"\n\r") != std::string::npos)
    fail("a value without quotes or newlines");
  switch (key.type) {
  case ValueType::String:
    return value;
  case ValueType::Integer: {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size())
      fail("an integer");
    return std::to_string(v);
  }
  case ValueType::Real: {
    double v = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || p != value.data() + value.size())
      fail("a number");
    std::ostringstream out;
    out << v;
    return out.str();
  }
  case ValueType::Boolean:
    if (value == "true" || value == "1" || value == "yes" || value == "on")
      return "true";
    if (value == "false" || value == "0" || value == "no" || value == "off")
      return "false";
    fail("true or false");
  case ValueType::List: {
    std::string joined;
    for (const auto& item : split_list(value))
      joined += (joined.empty() ? "" : ",") + item;
    return joined;
  }
  }
  return value;
}

} // namespace

NodeConfig NodeConfig::parse(std::string_view text)
{
  std::vector<CLI::ConfigItem> items;
  try {
    std::istringstream in{std::string(text)};
    items = CLI::ConfigTOML().from_config(in);
  }
  catch (const CLI::Error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  NodeConfig cfg;
  for (const auto& item : items) {
    // CLI11 reports section headers as "++"/"--" markers.
    if (item.name == "++" || item.name == "--" || !item.parents.empty())
      throw ConfigError("config sections are not supported");
    const auto* key = find_key(item.name);
    if (key == nullptr)
      throw ConfigError("unknown config key '" + item.name + "'");
    if (cfg.has(item.name))
      throw ConfigError("duplicate config key '" + item.name + "'");
    std::string raw;
    for (const auto& in : item.inputs)
      raw += (raw.empty() ? "" : ",") + in;
    if (key->type != ValueType::List && item.inputs.size() != 1)
      throw ConfigError(item.name + ": expected a single value");
    cfg.m_values[item.name] = normalize(*key, raw);
  }
  return cfg;
}

NodeConfig NodeConfig::load(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::string NodeConfig::serialize() const
{
  std::string out;
  for (const auto& key : config_schema()) {
    auto it = m_values.find(key.name);
    if (it == m_values.end())
      continue;
    out += key.name + " = ";
    switch (key.type) {
    case ValueType::String:
      out += "\"" + it->second + "\"";
      break;
    case ValueType::List: {
      out += "[";
      bool first = true;
      for (const auto& item : split_list(it->second)) {
        out += (first ? "\"" : ", \"") + item + "\"";
        first = false;
      }
      out += "]";
      break;
    }
    default:
      out += it->second;
    }
    out += "\n";
  }
  return out;
}

std::optional<std::string> NodeConfig::get(std::string_view key) const
{
  auto it = m_values.find(std::string(key));
  if (it == m_values.end())
    return std::nullopt;
  return it->second;
}

void NodeConfig::set(std::string_view name, std::string value)
{
  const auto* key = find_key(name);
  if (key == nullptr)
    throw ConfigError("unknown config key '" + std::string(name) + "'");
  m_values[key->name] = normalize(*key, std::move(value));
}

std::string NodeConfig::value_or_default(std::string_view name) const
{
  const auto* key = find_key(name);
  if (key == nullptr)
    throw ConfigError("unknown config key '" + std::string(name) + "'");
  auto it = m_values.find(key->name);
  return it == m_values.end() ? key->default_value : it->second;
}

std::string NodeConfig::str(std::string_view key) const { return value_or_default(key); }

std::int64_t NodeConfig::integer(std::string_view key) const
{
  auto v = value_or_default(key);
  if (v.empty())
    throw ConfigError(std::string(key) + " is not set");
  return std::stoll(v);
}

double NodeConfig::real(std::string_view key) const
{
  auto v = value_or_default(key);
  if (v.empty())
    throw ConfigError(std::string(key) + " is not set");
  return std::stod(v);
}

bool NodeConfig::boolean(std::string_view key) const { return value_or_default(key) == "true"; }

std::vector<std::string> NodeConfig::list(std::string_view key) const
{
  return split_list(value_or_default(key));
}

} // namespace ocdn::cli
