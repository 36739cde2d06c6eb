#include "tacforge/config.hpp"

#include <charconv>

#include "tacforge/common.hpp"

namespace tacforge {

namespace {

std::string strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return std::string(line.substr(0, i));
  }
  return std::string(line);
}

Config::Value parse_scalar(std::string_view s, int line_no) {
  Config::Value v;
  s = trim(s);
  auto fail = [&](const std::string& why) {
    return ValidationError("config line " + std::to_string(line_no) + ": " + why);
  };
  if (s.empty()) throw fail("missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw fail("unterminated string");
    v.kind = Config::Value::Kind::String;
    v.text = std::string(s.substr(1, s.size() - 2));
    return v;
  }
  if (s == "true" || s == "false") {
    v.kind = Config::Value::Kind::Bool;
    v.boolean = (s == "true");
    return v;
  }
  std::string cleaned;
  for (char c : s) {
    if (c != '_') cleaned.push_back(c);
  }
  if (!cleaned.empty() && cleaned.front() == '+') cleaned.erase(0, 1);
  double d = 0.0;
  auto res = std::from_chars(cleaned.data(), cleaned.data() + cleaned.size(), d);
  if (res.ec != std::errc() || res.ptr != cleaned.data() + cleaned.size()) {
    throw fail("cannot parse value '" + std::string(s) + "'");
  }
  v.kind = Config::Value::Kind::Number;
  v.number = d;
  v.text = cleaned;
  return v;
}

Config::Value parse_value(std::string_view s, int line_no) {
  s = trim(s);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') {
      throw ValidationError("config line " + std::to_string(line_no) + ": unterminated array");
    }
    Config::Value arr;
    arr.kind = Config::Value::Kind::Array;
    auto body = trim(s.substr(1, s.size() - 2));
    if (body.empty()) return arr;
    std::string item;
    bool in_string = false;
    for (char c : body) {
      if (c == '"') in_string = !in_string;
      if (c == ',' && !in_string) {
        if (!trim(item).empty()) arr.items.push_back(parse_scalar(item, line_no));
        item.clear();
      } else {
        item.push_back(c);
      }
    }
    if (!trim(item).empty()) arr.items.push_back(parse_scalar(item, line_no));
    return arr;
  }
  return parse_scalar(s, line_no);
}

}  // namespace

Config Config::parse(std::string_view text) {
  Config cfg;
  std::string table;
  cfg.tables_[table];
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    auto line_s = strip_comment(raw);
    auto line = trim(line_s);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3 || line[1] == '[') {
        throw ValidationError("config line " + std::to_string(line_no) + ": bad table header");
      }
      table = std::string(trim(line.substr(1, line.size() - 2)));
      cfg.tables_[table];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    auto& slot = cfg.tables_[table];
    if (slot.count(key)) {
      throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
    slot[key] = parse_value(line.substr(eq + 1), line_no);
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_file(path)); }

bool Config::has(const std::string& table, const std::string& key) const {
  auto t = tables_.find(table);
  return t != tables_.end() && t->second.count(key) > 0;
}

const Config::Value& Config::get(const std::string& table, const std::string& key) const {
  auto t = tables_.find(table);
  if (t == tables_.end() || !t->second.count(key)) {
    throw ValidationError("config: missing [" + table + "] " + key);
  }
  return t->second.at(key);
}

double Config::number(const std::string& table, const std::string& key) const {
  const auto& v = get(table, key);
  if (v.kind != Value::Kind::Number) {
    throw ValidationError("config: [" + table + "] " + key + " must be a number");
  }
  return v.number;
}

double Config::number_or(const std::string& table, const std::string& key, double fallback) const {
  return has(table, key) ? number(table, key) : fallback;
}

std::string Config::string(const std::string& table, const std::string& key) const {
  const auto& v = get(table, key);
  if (v.kind != Value::Kind::String) {
    throw ValidationError("config: [" + table + "] " + key + " must be a string");
  }
  return v.text;
}

std::string Config::string_or(const std::string& table, const std::string& key,
                              const std::string& fallback) const {
  return has(table, key) ? string(table, key) : fallback;
}

bool Config::boolean_or(const std::string& table, const std::string& key, bool fallback) const {
  if (!has(table, key)) return fallback;
  const auto& v = get(table, key);
  if (v.kind != Value::Kind::Bool) {
    throw ValidationError("config: [" + table + "] " + key + " must be a boolean");
  }
  return v.boolean;
}

std::vector<std::string> Config::strings(const std::string& table, const std::string& key) const {
  const auto& v = get(table, key);
  if (v.kind == Value::Kind::String) return {v.text};
  if (v.kind != Value::Kind::Array) {
    throw ValidationError("config: [" + table + "] " + key + " must be a string array");
  }
  std::vector<std::string> out;
  for (const auto& item : v.items) {
    if (item.kind != Value::Kind::String) {
      throw ValidationError("config: [" + table + "] " + key + " must hold strings");
    }
    out.push_back(item.text);
  }
  return out;
}

std::vector<double> Config::numbers(const std::string& table, const std::string& key) const {
  const auto& v = get(table, key);
  if (v.kind == Value::Kind::Number) return {v.number};
  if (v.kind != Value::Kind::Array) {
    throw ValidationError("config: [" + table + "] " + key + " must be a number array");
  }
  std::vector<double> out;
  for (const auto& item : v.items) {
    if (item.kind != Value::Kind::Number) {
      throw ValidationError("config: [" + table + "] " + key + " must hold numbers");
    }
    out.push_back(item.number);
  }
  return out;
}

}  // namespace tacforge
