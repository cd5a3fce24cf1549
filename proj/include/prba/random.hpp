#pragma once

#include <cstdint>
#include <random>

#include "prba/common.hpp"

namespace prba {

using Rng = std::mt19937_64;

// Independent sub-stream seeds. Streams are keyed by a purpose tag and an
// index so that, e.g., channel #17 is the same for every method under
// comparison.
enum class Stream : std::uint64_t {
    channel = 1,
    noise = 2,
    init = 3,
    train = 4,
    ablation = 5,
    misc = 6,
};

std::uint64_t derive_seed(std::uint64_t base, Stream stream, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t base, Stream stream, std::uint64_t index = 0) {
    return Rng(derive_seed(base, stream, index));
}

// CN(0, variance): real and imaginary parts are N(0, variance / 2).
cplx complex_normal(Rng& rng, double variance = 1.0);

double uniform(Rng& rng, double lo, double hi);

}  // namespace prba
