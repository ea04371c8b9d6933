// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace moca {

// Named random streams. A stream is fully determined by (seed, stream, step,
// index), so any consumer can be replayed without knowing what ran before it.
enum class Stream : std::uint64_t {
    augment = 1,
    mask = 2,
    codebook = 3,
    init = 4,
    shuffle = 5,
    eval = 6,
};

// Sampling helpers are written out by hand rather than taken from
// <random> distributions, whose output is implementation-defined; the
// checkpoints and replay tests rely on identical draws everywhere.
class Rng {
public:
    Rng(std::uint64_t seed, Stream stream, std::uint64_t step = 0, std::uint64_t index = 0);

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Standard normal (Box-Muller, no cached second value).
    double normal();
    // Uniform integer in [0, n). n must be positive.
    std::int64_t below(std::int64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    // k distinct values from [0, n), in sampling order (partial Fisher-Yates).
    std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);
    // In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(below(i + 1))]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace moca
