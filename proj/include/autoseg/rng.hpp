#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace autoseg {

using Rng = std::mt19937_64;

// Stable 64-bit hash of a string (FNV-1a), used to key per-case RNG streams.
inline uint64_t hash_string(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// One stream per (global seed, case, epoch); independent of loader order.
inline uint64_t derive_seed(uint64_t global, std::string_view case_id, uint64_t epoch) {
  return mix64(mix64(global) ^ hash_string(case_id) ^ mix64(epoch * 0x632be59bd9b4e019ULL + 1));
}

inline uint64_t derive_seed(uint64_t base, uint64_t salt) { return mix64(base ^ mix64(salt + 0x51ed270b27a3c1d5ULL)); }

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace autoseg
