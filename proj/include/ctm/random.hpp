#pragma once

#include <cstdint>
#include <random>

namespace ctm {

/// SplitMix64 finalizer; used to derive per-run stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for run `run_index` of a benchmark seeded with `seed`.
std::uint64_t run_seed(std::uint64_t seed, std::uint64_t run_index);

/// Uniform integer in [0, bound) from a 64-bit Mersenne Twister, by
/// rejection sampling. Unlike std::uniform_int_distribution the result is
/// identical across standard library implementations.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

}  // namespace ctm
