// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Row-major matrix kernels. All of them accumulate into C. Row blocks are
// independent, so splitting them across threads is bitwise deterministic.

#pragma once

#include <algorithm>
#include <cstdint>

#include "moca/numerics/parallel.hpp"

namespace moca::gemm {

// dst[c, r] = src[r, c]
template <class T>
void transpose(const T* src, T* dst, std::int64_t rows, std::int64_t cols) {
    constexpr std::int64_t tile = 32;
    for (std::int64_t r0 = 0; r0 < rows; r0 += tile) {
        const std::int64_t r1 = std::min(rows, r0 + tile);
        for (std::int64_t c0 = 0; c0 < cols; c0 += tile) {
            const std::int64_t c1 = std::min(cols, c0 + tile);
            for (std::int64_t r = r0; r < r1; ++r) {
                for (std::int64_t c = c0; c < c1; ++c) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

// C[n,m] += A[n,k] . B[k,m]
template <class T>
void gemm_nn_rows(const T* a, const T* b, T* c, std::int64_t row_begin, std::int64_t row_end, std::int64_t k,
                  std::int64_t m) {
    std::int64_t i = row_begin;
    for (; i + 4 <= row_end; i += 4) {
        T* c0 = c + (i + 0) * m;
        T* c1 = c + (i + 1) * m;
        T* c2 = c + (i + 2) * m;
        T* c3 = c + (i + 3) * m;
        const T* a0 = a + (i + 0) * k;
        const T* a1 = a + (i + 1) * k;
        const T* a2 = a + (i + 2) * k;
        const T* a3 = a + (i + 3) * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const T* brow = b + p * m;
            const T x0 = a0[p];
            const T x1 = a1[p];
            const T x2 = a2[p];
            const T x3 = a3[p];
            for (std::int64_t j = 0; j < m; ++j) {
                const T bv = brow[j];
                c0[j] += x0 * bv;
                c1[j] += x1 * bv;
                c2[j] += x2 * bv;
                c3[j] += x3 * bv;
            }
        }
    }
    for (; i < row_end; ++i) {
        T* ci = c + i * m;
        const T* ai = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            const T* brow = b + p * m;
            const T x = ai[p];
            for (std::int64_t j = 0; j < m; ++j) {
                ci[j] += x * brow[j];
            }
        }
    }
}

template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t n, std::int64_t k, std::int64_t m) {
    const std::int64_t work_per_row = std::max<std::int64_t>(1, k * m);
    const std::int64_t min_rows = std::max<std::int64_t>(4, (1 << 18) / work_per_row);
    if (n * work_per_row < (1 << 20)) {
        gemm_nn_rows(a, b, c, 0, n, k, m);
        return;
    }
    // Chunks start at multiples of 4 so the blocking is identical for any
    // thread count.
    const std::int64_t blocks = (n + 3) / 4;
    parallel_for(blocks, (min_rows + 3) / 4, [&](std::int64_t b0, std::int64_t b1) {
        gemm_nn_rows(a, b, c, b0 * 4, std::min(n, b1 * 4), k, m);
    });
}

// C[k,m] += A[n,k]^T . B[n,m]
template <class T>
void gemm_tn_cols(const T* a, const T* b, T* c, std::int64_t n, std::int64_t k, std::int64_t m, std::int64_t p_begin,
                  std::int64_t p_end) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const T* b0 = b + (i + 0) * m;
        const T* b1 = b + (i + 1) * m;
        const T* b2 = b + (i + 2) * m;
        const T* b3 = b + (i + 3) * m;
        for (std::int64_t p = p_begin; p < p_end; ++p) {
            const T x0 = a[(i + 0) * k + p];
            const T x1 = a[(i + 1) * k + p];
            const T x2 = a[(i + 2) * k + p];
            const T x3 = a[(i + 3) * k + p];
            T* cp = c + p * m;
            for (std::int64_t j = 0; j < m; ++j) {
                cp[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
            }
        }
    }
    for (; i < n; ++i) {
        const T* bi = b + i * m;
        for (std::int64_t p = p_begin; p < p_end; ++p) {
            const T x = a[i * k + p];
            T* cp = c + p * m;
            for (std::int64_t j = 0; j < m; ++j) {
                cp[j] += x * bi[j];
            }
        }
    }
}

template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t n, std::int64_t k, std::int64_t m) {
    if (n * k * m < (1 << 20)) {
        gemm_tn_cols(a, b, c, n, k, m, 0, k);
        return;
    }
    parallel_for(k, 8, [&](std::int64_t p0, std::int64_t p1) { gemm_tn_cols(a, b, c, n, k, m, p0, p1); });
}

} // namespace moca::gemm
