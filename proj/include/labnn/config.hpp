#pragma once

#include <map>
#include <string>
#include <vector>

#include "labnn/common.hpp"

namespace labnn {

// Minimal config document: UTF-8 text, '#' comments, [section] headers,
// key = value lines. Values are typed by syntax in the getters. Key order
// within a section is preserved for the effective-config echo.
class RunConfig {
 public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, const std::string& raw);

  // Getters with defaults; the no-default forms fail naming the missing key.
  int64_t get_int(const std::string& section, const std::string& key) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_real(const std::string& section, const std::string& key) const;
  double get_real(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::string get_str(const std::string& section, const std::string& key) const;
  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;

  // Rejects any present key not listed in the schema (section -> keys).
  void require_known(const std::map<std::string, std::vector<std::string>>& schema) const;

  // Canonical serialization of the effective document.
  std::string echo() const;

 private:
  const std::string* find(const std::string& section, const std::string& key) const;
  const std::string& require(const std::string& section, const std::string& key) const;

  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  std::vector<Section> sections_;
};

bool looks_like_int(const std::string& s);
bool looks_like_real(const std::string& s);
bool looks_like_bool(const std::string& s);

}  // namespace labnn
