// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Online codebook of teacher token embeddings, teacher soft assignments with
// an adaptive temperature, and bag-of-words pooling of the assignments.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moca/numerics/rng.hpp"
#include "moca/numerics/tensor.hpp"

namespace moca {

// FIFO ring of K unit-norm embeddings. Row write_ptr is the oldest entry.
struct Codebook {
    Tensor entries;                  // [K, d], detached, rows L2-normalized
    std::int64_t write_ptr = 0;
    std::vector<std::int64_t> ages;  // step at which each row was written; -1 for the initial fill
    std::int64_t k_new = 4;

    std::int64_t size() const { return entries.dim(0); }
    std::int64_t dim() const { return entries.dim(1); }

    // Gaussian rows, L2-normalized.
    static Codebook random(std::int64_t k, std::int64_t d, std::int64_t k_new, std::uint64_t seed,
                           DType dtype = DType::f32);
    // Rows of `rows` are normalized and copied; write_ptr 0.
    static Codebook from_rows(const Tensor& rows, std::int64_t k_new);
};

struct TemperatureState {
    double msd_ema = 0.1;
    double momentum = 0.99;
    double floor = 1e-3;

    // 1 / (10 * max(msd_ema, floor)).
    double tau() const;
};

struct Assignment {
    Tensor sims;  // [rows, K] cosine similarities
    Tensor q;     // [rows, K] softmax_t(sims, tau)
};

// Soft assignments of teacher tokens [rows, d] to the codebook at the
// temperature of `ts`. Results are detached.
Assignment assign(const Tensor& teacher_tokens, const Codebook& cb, const TemperatureState& ts);

// Mean over images of the per-image average (max_k sim - mean_k sim).
// `sims` holds `batch` images with equal token counts.
double mean_similarity_difference(const Tensor& sims, std::int64_t batch);

// Folds one batch of similarities into the EMA and returns the new tau.
double update_temperature(TemperatureState& ts, const Tensor& sims, std::int64_t batch);
// Same, from an already reduced batch value.
double update_temperature(TemperatureState& ts, double batch_msd);

struct EnqueuedToken {
    std::int64_t image = 0;  // batch position
    std::int64_t view = 0;
    std::int64_t patch = 0;  // 0-based patch index
    std::int64_t slot = 0;   // ring row written
};

// Writes K_new teacher patch tokens into the ring, each drawn from a different
// image (distinct `image_ids`), with a uniformly random view and patch.
// views[v] is [B * N, d] for view v. Throws ConfigError when the batch holds
// fewer than K_new distinct images.
std::vector<EnqueuedToken> enqueue(Codebook& cb, std::span<const Tensor> views, std::int64_t batch,
                                   std::span<const std::int64_t> image_ids, std::int64_t step, Rng& rng);

// min(2, floor((min(rows, cols) - 1) / 2)).
std::int64_t default_border(std::int64_t rows, std::int64_t cols);

// Mean of q [B * rows * cols, K] over the interior of each image's grid after
// dropping `border` rows and columns on every side. Returns [B, K].
Tensor reduce_bow(const Tensor& q, std::int64_t batch, std::int64_t rows, std::int64_t cols, std::int64_t border);

} // namespace moca
