#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fusenet {

/// Flat `key=value` text config. Keys keep insertion order so written files
/// are stable; '#' starts a comment line.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::size_t value);
  void set(const std::string& key, const std::vector<std::size_t>& values);

  bool contains(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  /// Throws MalformedConfig when the key is missing or does not parse.
  std::string get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  /// Keys overwritten by `other` win; new keys are appended.
  void merge(const KeyValueConfig& other);

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest round-tripping decimal form of a double.
std::string format_double(double v);

}  // namespace fusenet
