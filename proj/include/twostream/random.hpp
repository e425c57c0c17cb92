#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace twostream {

// splitmix64; used to derive independent per-component seeds from one root seed.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Stable FNV-1a tag hash so derived seeds do not depend on call order.
inline uint64_t hash_tag(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t root, std::string_view tag) {
    return splitmix64(root ^ hash_tag(tag));
}

inline uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t index) {
    return splitmix64(derive_seed(root, tag) ^ splitmix64(index));
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace twostream
