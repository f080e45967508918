#include "fusenet/rng.hpp"

namespace fusenet {

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t hash) {
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t hash) {
  return fnv1a(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()), hash);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view role) {
  std::uint64_t z = seed ^ fnv1a(role);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fusenet
