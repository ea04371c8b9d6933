// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace moca {

// Worker cap for data-parallel kernels. Defaults to the MOCA_THREADS
// environment variable, else 1.
int max_threads();
void set_max_threads(int n);

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on each.
// Chunks never share output, so results do not depend on the thread count.
void parallel_for(std::int64_t n, std::int64_t min_chunk,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace moca
