#pragma once

// Line-oriented `key = value` configuration text with optional [section]
// headers. Keys are stored fully qualified ("train.max_epochs"); '#' starts
// a comment. Serialization groups keys by section in first-seen order, so
// parse -> serialize -> parse is stable.

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tilemark {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::string& path);

  std::string serialize() const;

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  bool contains(const std::string& key) const { return get(key).has_value(); }
  bool erase(const std::string& key);
  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }
  bool operator==(const KeyValueConfig&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

// Value parsers; each raises ConfigError naming the key on malformed input.
int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<int> parse_int_list(const std::string& key, const std::string& value);

std::string format_double(double v);
std::string format_int_list(const std::vector<int>& values);

}  // namespace tilemark
