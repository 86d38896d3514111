#pragma once

#include <cstdint>
#include <random>

namespace bayesoc {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seed splitting rule used by every experiment:
//   derive_seed(master, a, b) = sm(sm(sm(master) ^ sm(a + 1)) ^ sm(b + 2))
// where sm is splitmix64. `a` is the replication index and `b` the N-ladder
// index (or a stream tag). Nothing reads ambient randomness.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                    std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ splitmix64(a + 1));
  return splitmix64(s ^ splitmix64(b + 2));
}

}  // namespace bayesoc
