#pragma once

#include <cstdint>
#include <random>

namespace fidelity {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a 64-bit value into a well-distributed one.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for an independent stream; depends only on (seed, stream), never on call order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Stream identifiers shared by the simulator and the session service.
namespace streams {
inline constexpr std::uint64_t kTasks = 1;
inline constexpr std::uint64_t kArrivals = 2;
inline constexpr std::uint64_t kOperator = 3;
inline constexpr std::uint64_t kPolicy = 4;
inline constexpr std::uint64_t kNoise = 5;
inline constexpr std::uint64_t kEpisodeBase = 1000;
} // namespace streams

/// Poisson draw that consumes no randomness when the mean is zero.
inline int sample_poisson(Rng& rng, double mean) {
    if (!(mean > 0.0)) return 0;
    std::poisson_distribution<int> dist(mean);
    return dist(rng);
}

} // namespace fidelity
