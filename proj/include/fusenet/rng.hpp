#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace fusenet {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                    std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text, std::uint64_t hash = 0xcbf29ce484222325ULL);

/// Sub-seed for a named role ("split", "init", "shuffle", "synth", ...).
/// splitmix64 over seed ^ fnv1a(role), so roles are decorrelated.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view role);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fusenet
