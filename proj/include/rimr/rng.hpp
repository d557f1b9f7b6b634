#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace rimr::rng {

// All randomness derives from one u64 seed. Each consumer asks for a stream
// keyed by a purpose string and an index, so adding a new consumer never
// perturbs the draws of an existing one.
//
//   stream_seed = splitmix64(seed ^ fnv1a(purpose) ^ splitmix64(index))

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose,
                                    std::uint64_t index = 0) {
    return splitmix64(seed ^ fnv1a(purpose) ^ splitmix64(index));
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
    return Engine(stream_seed(seed, purpose, index));
}

// Uniform double in [lo, hi). Written out instead of std::uniform_real_distribution
// so the bit pattern of every draw is fixed by the engine alone.
inline double uniform(Engine& eng, double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// Box-Muller standard normal.
inline double normal(Engine& eng) {
    double u1 = uniform(eng);
    while (u1 <= 0.0) u1 = uniform(eng);
    const double u2 = uniform(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Uniform integer in [0, n).
inline std::uint64_t below(Engine& eng, std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(eng);
}

}  // namespace rimr::rng
