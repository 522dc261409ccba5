#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace pdcn {

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Sub-seed for a named stage: mix64(root ^ fnv1a64(tag)) further mixed with
/// an index. Every randomized stage of the pipeline draws from one of these.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                    std::uint64_t index = 0) {
  return mix64(mix64(root ^ fnv1a64(tag)) + index);
}

using Rng = std::mt19937_64;

}  // namespace pdcn
