#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eddyid {

// Counter-based seed derivation: the seed for (stage, member) depends only on
// the master seed, the stage name, and the member index, so growing the
// ensemble never reshuffles earlier members.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage,
                                 std::uint64_t member = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the stage name
  for (unsigned char c : stage) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(splitmix64(master ^ h) + member);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::string_view stage,
                    std::uint64_t member = 0) {
  return Rng(derive_seed(master, stage, member));
}

}  // namespace eddyid
