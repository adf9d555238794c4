#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

namespace augdr {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

/// 64-bit FNV-1a over raw bytes. Used for token bucketing, seed derivation
/// and file checksums, so its output must never change.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t state = kFnvOffset) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= kFnvPrime;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                             std::uint64_t state = kFnvOffset) {
  for (std::byte b : bytes) {
    state ^= static_cast<std::uint64_t>(b);
    state *= kFnvPrime;
  }
  return state;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent sub-stream seed from a parent seed and a path of
/// labels, e.g. derive_seed(seed, {"sample", "iter", "3"}).
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::string_view> labels) {
  std::uint64_t h = splitmix64(seed);
  for (auto label : labels) {
    h = splitmix64(fnv1a64(label, h) ^ 0x5851F42D4C957F2DULL);
  }
  return h;
}

std::string to_hex(std::uint64_t value);

}  // namespace augdr
