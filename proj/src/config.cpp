#include "labnn/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace labnn {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

bool looks_like_int(const std::string& s) {
  if (s.empty()) return false;
  size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
  }
  return true;
}

bool looks_like_real(const std::string& s) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  (void)v;
  return end == s.c_str() + s.size();
}

bool looks_like_bool(const std::string& s) { return s == "true" || s == "false"; }

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  LABNN_CHECK(f.good(), "cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str(), path);
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::string current;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      LABNN_CHECK(line.back() == ']', "malformed section header at " + where);
      current = trim(line.substr(1, line.size() - 2));
      LABNN_CHECK(!current.empty(), "empty section name at " + where);
      continue;
    }
    const size_t eq = line.find('=');
    LABNN_CHECK(eq != std::string::npos, "expected key = value at " + where);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    LABNN_CHECK(!key.empty(), "empty key at " + where);
    LABNN_CHECK(!current.empty(), "key outside any [section] at " + where);
    LABNN_CHECK(cfg.find(current, key) == nullptr,
                "duplicate key " + current + "." + key + " at " + where);
    cfg.set(current, key, value);
  }
  return cfg;
}

const std::string* RunConfig::find(const std::string& section, const std::string& key) const {
  for (const Section& s : sections_) {
    if (s.name != section) continue;
    for (const auto& [k, v] : s.entries) {
      if (k == key) return &v;
    }
  }
  return nullptr;
}

const std::string& RunConfig::require(const std::string& section, const std::string& key) const {
  const std::string* v = find(section, key);
  if (!v) fail("missing config key " + section + "." + key);
  return *v;
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& raw) {
  for (Section& s : sections_) {
    if (s.name != section) continue;
    for (auto& [k, v] : s.entries) {
      if (k == key) {
        v = raw;
        return;
      }
    }
    s.entries.emplace_back(key, raw);
    return;
  }
  sections_.push_back({section, {{key, raw}}});
}

int64_t RunConfig::get_int(const std::string& section, const std::string& key) const {
  const std::string& v = require(section, key);
  LABNN_CHECK(looks_like_int(v), "config key " + section + "." + key + " is not an integer: " + v);
  return std::stoll(v);
}

int64_t RunConfig::get_int(const std::string& section, const std::string& key,
                           int64_t fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

double RunConfig::get_real(const std::string& section, const std::string& key) const {
  const std::string& v = require(section, key);
  LABNN_CHECK(looks_like_real(v), "config key " + section + "." + key + " is not a real: " + v);
  return std::stod(v);
}

double RunConfig::get_real(const std::string& section, const std::string& key,
                           double fallback) const {
  return has(section, key) ? get_real(section, key) : fallback;
}

bool RunConfig::get_bool(const std::string& section, const std::string& key) const {
  const std::string& v = require(section, key);
  LABNN_CHECK(looks_like_bool(v), "config key " + section + "." + key + " is not a bool: " + v);
  return v == "true";
}

bool RunConfig::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  return has(section, key) ? get_bool(section, key) : fallback;
}

std::string RunConfig::get_str(const std::string& section, const std::string& key) const {
  return require(section, key);
}

std::string RunConfig::get_str(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get_str(section, key) : fallback;
}

void RunConfig::require_known(
    const std::map<std::string, std::vector<std::string>>& schema) const {
  for (const Section& s : sections_) {
    const auto it = schema.find(s.name);
    if (it == schema.end()) fail("unknown config section [" + s.name + "]");
    for (const auto& [k, v] : s.entries) {
      if (std::find(it->second.begin(), it->second.end(), k) == it->second.end()) {
        fail("unknown config key " + s.name + "." + k);
      }
    }
  }
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const Section& s : sections_) {
    os << "[" << s.name << "]\n";
    for (const auto& [k, v] : s.entries) os << k << " = " << v << "\n";
    os << "\n";
  }
  return os.str();
}

}  // namespace labnn
