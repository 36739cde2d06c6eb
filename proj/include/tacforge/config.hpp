#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tacforge {

/**
 * @brief Reader for the flat TOML subset used by scenario, pattern and
 * experiment files.
 *
 * Supported: `[table]` headers, `key = value` pairs, `#` comments, and values
 * that are numbers, booleans, double-quoted strings, or single-line arrays of
 * those. Nested tables, inline tables and multi-line strings are rejected.
 */
class Config {
 public:
  struct Value {
    enum class Kind { Number, String, Bool, Array } kind = Kind::Number;
    double number = 0.0;
    std::string text;  // string payload, or the literal for numbers
    bool boolean = false;
    std::vector<Value> items;
  };

  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& table, const std::string& key) const;
  bool has_table(const std::string& table) const { return tables_.count(table) > 0; }

  double number(const std::string& table, const std::string& key) const;
  double number_or(const std::string& table, const std::string& key, double fallback) const;
  std::string string(const std::string& table, const std::string& key) const;
  std::string string_or(const std::string& table, const std::string& key,
                        const std::string& fallback) const;
  bool boolean_or(const std::string& table, const std::string& key, bool fallback) const;
  std::vector<std::string> strings(const std::string& table, const std::string& key) const;
  std::vector<double> numbers(const std::string& table, const std::string& key) const;

  const std::map<std::string, std::map<std::string, Value>>& tables() const { return tables_; }

 private:
  const Value& get(const std::string& table, const std::string& key) const;

  std::map<std::string, std::map<std::string, Value>> tables_;
};

}  // namespace tacforge
