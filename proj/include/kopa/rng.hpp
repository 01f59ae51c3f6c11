#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace kopa {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent per-worker streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `ids...` under `master`. Streams are keyed by position
/// (epoch, triple index, ...) so results do not depend on thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = mix64(master);
  for (auto id : ids) s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng derive_rng(std::uint64_t master, std::initializer_list<std::uint64_t> ids) {
  return Rng(derive_seed(master, ids));
}

}  // namespace kopa
