#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lifelong {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t n,
                                 std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Named sub-stream of a master seed. Streams with different names (or
// indices) are statistically independent, so e.g. changing the number of
// evaluation trials never perturbs the training stream.
inline std::uint64_t stream_seed(std::uint64_t master, std::string_view name,
                                 std::uint64_t index = 0) {
    return splitmix64(splitmix64(master ^ fnv1a(name)) + splitmix64(index + 1));
}

inline Rng make_stream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
    return Rng(stream_seed(master, name, index));
}

// Uniform double in [0, 1) from the top 53 bits of one engine draw. Unlike
// std::uniform_real_distribution this consumes exactly one draw per call on
// every standard library.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform index in [0, n) from one engine draw. n must be > 0.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
    return i < n ? i : n - 1;
}

}  // namespace lifelong
