#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace prefalign {

// Flat `key = value` configuration with dotted section names
// (world.*, judge.*, train.*, protocol.*). Lines starting with '#' and
// trailing '#' comments are ignored. Keys are stored sorted, so the digest
// is invariant to the order keys appear in the file.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse_string(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);

  const std::map<std::string, std::string>& values() const { return values_; }

  // Throws std::invalid_argument naming every key not in `known`.
  void require_known_keys(const std::vector<std::string>& known) const;

  // FNV-1a 64 over the sorted "key=value\n" lines, as 16 hex digits.
  // Depends only on key/value content, so it is stable across machines.
  std::string digest() const;

 private:
  std::map<std::string, std::string> values_;
};

// Doubles formatted with %.17g round-trip exactly through text.
std::string format_double(double v);

}  // namespace prefalign
