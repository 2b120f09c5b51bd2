#pragma once

#include <cstdint>
#include <random>

namespace am {

/// splitmix64 finalizer; good avalanche, used to derive independent substreams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Per-task RNG substream. Independent of how many other tasks were sampled,
/// so parallel evaluation is deterministic under any scheduling.
inline std::mt19937_64 task_rng(std::uint64_t seed, std::uint64_t task_index) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ splitmix64(task_index + 1)));
}

}  // namespace am
