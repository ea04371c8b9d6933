// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/rng.hpp"

#include <cmath>
#include <numbers>

#include "moca/errors.hpp"

namespace moca {

namespace {

std::seed_seq make_seq(std::uint64_t seed, Stream stream, std::uint64_t step, std::uint64_t index) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    const auto s = static_cast<std::uint64_t>(stream);
    return std::seed_seq{lo(seed), hi(seed), lo(s), hi(s), lo(step), hi(step), lo(index), hi(index)};
}

} // namespace

Rng::Rng(std::uint64_t seed, Stream stream, std::uint64_t step, std::uint64_t index) {
    auto seq = make_seq(seed, stream, step, index);
    engine_.seed(seq);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Rng::below(std::int64_t n) {
    if (n <= 0) {
        throw ContractViolation("Rng::below: n must be positive, got " + std::to_string(n));
    }
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v = engine_();
    while (v >= limit) {
        v = engine_();
    }
    return static_cast<std::int64_t>(v % un);
}

std::vector<std::int64_t> Rng::sample_without_replacement(std::int64_t n, std::int64_t k) {
    if (k < 0 || k > n) {
        throw ContractViolation("cannot sample " + std::to_string(k) + " of " + std::to_string(n) + " items");
    }
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        pool[static_cast<std::size_t>(i)] = i;
    }
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t j = i + below(n - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
}

} // namespace moca
