#include "koopmhe/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "koopmhe/error.hpp"
#include "koopmhe/rng.hpp"

namespace koopmhe {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  require(end != text.c_str() && *end == '\0' && errno == 0, ErrorCode::kConfiguration,
          "key '" + key + "': '" + text + "' is not a number");
  return v;
}

std::int64_t to_int(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  require(end != text.c_str() && *end == '\0' && errno == 0, ErrorCode::kConfiguration,
          "key '" + key + "': '" + text + "' is not an integer");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  require(!text.empty() && text[0] != '-', ErrorCode::kConfiguration,
          "key '" + key + "': '" + text + "' is not an unsigned integer");
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  require(end != text.c_str() && *end == '\0' && errno == 0, ErrorCode::kConfiguration,
          "key '" + key + "': '" + text + "' is not an unsigned integer");
  return v;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorCode::kConfiguration,
            origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    const auto hash = value.find(" #");
    if (hash != std::string::npos) value = trim(value.substr(0, hash));
    require(!key.empty(), ErrorCode::kConfiguration,
            origin + ":" + std::to_string(lineno) + ": empty key");
    require(!kv.has(key), ErrorCode::kConfiguration,
            origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.values_[key] = value;
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) { return parse(read_text_file(path), path); }

std::string KeyValues::get_string(const std::string& key) const {
  auto it = values_.find(key);
  require(it != values_.end(), ErrorCode::kConfiguration,
          origin_ + ": missing key '" + key + "'");
  return it->second;
}

double KeyValues::get_double(const std::string& key) const {
  return to_double(key, get_string(key));
}

std::int64_t KeyValues::get_int(const std::string& key) const {
  return to_int(key, get_string(key));
}

std::uint64_t KeyValues::get_u64(const std::string& key) const {
  return to_u64(key, get_string(key));
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  fail(ErrorCode::kConfiguration, "key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> KeyValues::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get_string(key))) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> KeyValues::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get_string(key))) {
    out.push_back(static_cast<int>(to_int(key, item)));
  }
  return out;
}

std::vector<std::uint64_t> KeyValues::get_u64s(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get_string(key))) out.push_back(to_u64(key, item));
  return out;
}

template <>
double KeyValues::get_or<double>(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
template <>
int KeyValues::get_or<int>(const std::string& key, int fallback) const {
  return has(key) ? static_cast<int>(get_int(key)) : fallback;
}
template <>
std::uint64_t KeyValues::get_or<std::uint64_t>(const std::string& key,
                                               std::uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}
template <>
bool KeyValues::get_or<bool>(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}
template <>
std::string KeyValues::get_or<std::string>(const std::string& key, std::string fallback) const {
  return has(key) ? get_string(key) : fallback;
}

KeyValues KeyValues::section(const std::string& prefix) const {
  KeyValues out;
  out.origin_ = origin_;
  for (const auto& [k, v] : values_) {
    if (k.rfind(prefix, 0) == 0) out.values_[k.substr(prefix.size())] = v;
  }
  return out;
}

void KeyValues::expect_only(const std::vector<std::string>& known, const std::string& what) const {
  for (const auto& [k, v] : values_) {
    require(std::find(known.begin(), known.end(), k) != known.end(), ErrorCode::kConfiguration,
            origin_ + ": unknown " + what + " key '" + k + "'");
  }
}

std::string KeyValues::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t KeyValues::fingerprint() const { return fnv1a64(to_string()); }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "write to '" + path + "' failed");
}

}  // namespace koopmhe
