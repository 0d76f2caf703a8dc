#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace amt {

using Rng = std::mt19937_64;

// FNV-1a, used to derive independent deterministic streams from
// (seed, label) pairs. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(mix_seed(seed, stream));
}

inline Rng make_rng(std::uint64_t seed, std::string_view label) {
    return Rng(mix_seed(seed, fnv1a(label)));
}

}  // namespace amt
