// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace moca {

namespace {

int threads_from_env() {
    if (const char* env = std::getenv("MOCA_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    return 1;
}

std::atomic<int> g_max_threads{threads_from_env()};

} // namespace

int max_threads() { return g_max_threads.load(); }

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

void parallel_for(std::int64_t n, std::int64_t min_chunk,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) {
        return;
    }
    const std::int64_t chunk = std::max<std::int64_t>(1, min_chunk);
    const auto workers = static_cast<std::int64_t>(
        std::min<std::int64_t>(max_threads(), (n + chunk - 1) / chunk));
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    const std::int64_t per = (n + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (std::int64_t w = 1; w < workers; ++w) {
        const std::int64_t b = w * per;
        const std::int64_t e = std::min(n, b + per);
        if (b < e) {
            pool.emplace_back([&fn, b, e] { fn(b, e); });
        }
    }
    fn(0, std::min(n, per));
}

} // namespace moca
