#pragma once

// Per-node key = value configuration shared by every ocdn subcommand.

#include "ocdn/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ocdn::cli {

class ConfigError : public Error
{
public:
  using Error::Error;
};

enum class ValueType
{
  String,
  Integer,
  Real,
  Boolean,
  List, // comma separated, or a TOML array
};

struct ConfigKey
{
  std::string name;
  ValueType type;
  std::string default_value; // empty when there is none
  std::string help;
};

/// Every key a node config may contain.
const std::vector<ConfigKey>& config_schema();
const ConfigKey* find_key(std::string_view name);

class NodeConfig
{
public:
  /// Throws ConfigError for syntax errors, sections, unknown keys, or ill-typed values.
  static NodeConfig parse(std::string_view text);
  static NodeConfig load(const std::string& path);

  /// Canonical text: known keys in schema order, one per line.
  std::string serialize() const;

  bool has(std::string_view key) const { return m_values.contains(std::string(key)); }
  /// Raw text of a set value (lists joined by ',').
  std::optional<std::string> get(std::string_view key) const;
  /// Validates against the schema type before storing.
  void set(std::string_view key, std::string value);

  std::string str(std::string_view key) const;
  std::int64_t integer(std::string_view key) const;
  double real(std::string_view key) const;
  bool boolean(std::string_view key) const;
  std::vector<std::string> list(std::string_view key) const;

  bool operator==(const NodeConfig&) const = default;

private:
  std::string value_or_default(std::string_view key) const;

  std::map<std::string, std::string> m_values;
};

} // namespace ocdn::cli
