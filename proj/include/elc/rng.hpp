#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace elc {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Independent substream keyed by (purpose, a, b). Every consumer of
// randomness derives its own stream so results do not depend on the order
// in which work items run.
inline Rng substream(std::uint64_t master, std::string_view purpose, std::uint64_t a = 0,
                     std::uint64_t b = 0) {
  std::uint64_t s = detail::splitmix64(master ^ detail::fnv1a(purpose));
  s = detail::splitmix64(s ^ a);
  s = detail::splitmix64(s ^ (b + 0x632be59bd9b4e019ULL));
  return Rng(s);
}

}  // namespace elc
