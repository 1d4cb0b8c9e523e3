#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace posemb {

using Rng = std::mt19937_64;

// Mixes a root seed with a stream name (FNV-1a over the name, then splitmix64)
// so that masking, initialisation and data each get an independent stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stream) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng substream(std::uint64_t root, std::string_view stream) { return Rng(derive_seed(root, stream)); }

}  // namespace posemb
