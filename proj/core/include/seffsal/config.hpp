#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "seffsal/trainer.hpp"

namespace seffsal {

/// One recognised configuration key.
struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  /// Subcommands that read the key.
  std::vector<std::string> commands;
};

/// Every key in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat `key = value` document. Lines are trimmed; everything after `#` is a comment;
/// blank lines are ignored; lists are comma separated. Unknown keys, duplicate keys and
/// malformed lines raise ConfigError naming the key or line.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "<string>");
  static RunConfig load(const std::filesystem::path& path);

  /// Applies a `key=value` override.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  [[nodiscard]] const std::string& get(const std::string& key) const;
  [[nodiscard]] bool is_default(const std::string& key) const;

  [[nodiscard]] std::string get_string(const std::string& key) const { return get(key); }
  [[nodiscard]] int get_int(const std::string& key) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key) const;
  [[nodiscard]] double get_double(const std::string& key) const;
  [[nodiscard]] bool get_bool(const std::string& key) const;
  [[nodiscard]] std::vector<int> get_int_list(const std::string& key) const;

  /// Path-valued key that must be non-empty; ConfigError names the key otherwise.
  [[nodiscard]] std::filesystem::path require_path(const std::string& key) const;

  [[nodiscard]] NetConfig net() const;
  [[nodiscard]] TrainConfig train() const;

  /// All keys in documentation order, one `key = value` line each; parse(echo()) gives
  /// back an equal configuration.
  [[nodiscard]] std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

}  // namespace seffsal
