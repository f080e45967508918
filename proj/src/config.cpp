#include "fusenet/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fusenet/error.hpp"

namespace fusenet {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

KeyValueConfig KeyValueConfig::parse(std::istream& in) {
  KeyValueConfig cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw MalformedConfig("line " + std::to_string(number) + " has no '=': " + text);
    }
    cfg.set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse(in);
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const auto& e) { return e.first == key; });
  if (it != entries_.end()) {
    it->second = std::move(value);
  } else {
    entries_.emplace_back(key, std::move(value));
  }
}

void KeyValueConfig::set(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueConfig::set(const std::string& key, std::size_t value) {
  set(key, std::to_string(value));
}

void KeyValueConfig::set(const std::string& key, const std::vector<std::size_t>& values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ',';
    joined += std::to_string(values[i]);
  }
  set(key, std::move(joined));
}

bool KeyValueConfig::contains(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KeyValueConfig::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::string KeyValueConfig::get(const std::string& key) const {
  auto v = find(key);
  if (!v) throw MalformedConfig("missing key '" + key + "'");
  return *v;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string text = get(key);
  double v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw MalformedConfig("key '" + key + "' is not a number: " + text);
  }
  return v;
}

std::size_t KeyValueConfig::get_size(const std::string& key) const {
  const std::string text = get(key);
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw MalformedConfig("key '" + key + "' is not a non-negative integer: " + text);
  }
  return v;
}

std::vector<std::size_t> KeyValueConfig::get_sizes(const std::string& key) const {
  const std::string text = get(key);
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || end != item.data() + item.size() || item.empty()) {
      throw MalformedConfig("key '" + key + "' has a bad list entry: " + text);
    }
    out.push_back(v);
  }
  return out;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

void KeyValueConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  write(out);
}

}  // namespace fusenet
