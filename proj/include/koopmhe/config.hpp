#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace koopmhe {

// Flat `key = value` text. Lines starting with '#' are comments.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text, const std::string& origin = "<text>");
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  std::vector<std::uint64_t> get_u64s(const std::string& key) const;

  template <class T>
  T get_or(const std::string& key, T fallback) const;

  // Entries whose key starts with `prefix`, with the prefix removed.
  KeyValues section(const std::string& prefix) const;

  // Fails on any key not listed in `known`.
  void expect_only(const std::vector<std::string>& known, const std::string& what) const;

  std::string to_string() const;
  std::uint64_t fingerprint() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_ = "<text>";
};

template <>
double KeyValues::get_or<double>(const std::string& key, double fallback) const;
template <>
int KeyValues::get_or<int>(const std::string& key, int fallback) const;
template <>
std::uint64_t KeyValues::get_or<std::uint64_t>(const std::string& key,
                                               std::uint64_t fallback) const;
template <>
bool KeyValues::get_or<bool>(const std::string& key, bool fallback) const;
template <>
std::string KeyValues::get_or<std::string>(const std::string& key, std::string fallback) const;

// Shortest decimal text that round-trips a double exactly (17 significant digits).
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace koopmhe
