#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace umi {

// Line-oriented `key = value` configuration with dotted section prefixes,
// e.g. `phantom.n_axial = 128`. `#` starts a comment; blank lines ignored.
class Config {
 public:
  static Config load(const std::string& path);
  static Config parse(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_num(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  // Comma-separated list of numbers.
  std::vector<double> get_list(const std::string& key,
                               const std::vector<double>& fallback) const;

  // Keys that start with the given prefix, in lexicographic order.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

 private:
  std::map<std::string, std::string> values_;
};

} // namespace umi
