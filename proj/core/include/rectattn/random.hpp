#pragma once

#include <cstdint>
#include <random>

namespace rectattn {

using Rng = std::mt19937_64;

/// Independent generator for stream `index` of a master seed, so parallel
/// workers draw the same numbers regardless of scheduling.
Rng derive_stream(std::uint64_t master_seed, std::uint64_t index);

double uniform(Rng& rng, double lo, double hi);
int uniform_int(Rng& rng, int lo, int hi_inclusive);
/// +1 or -1 with equal probability.
int rademacher(Rng& rng);

}  // namespace rectattn
