// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/codebook/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"

namespace moca {

Codebook Codebook::random(std::int64_t k, std::int64_t d, std::int64_t k_new, std::uint64_t seed, DType dtype) {
    Rng rng(seed, Stream::codebook, 0, 0);
    std::vector<double> v(static_cast<std::size_t>(k * d));
    for (auto& x : v) {
        x = rng.normal();
    }
    return from_rows(Tensor::from_f64({k, d}, v, dtype), k_new);
}

Codebook Codebook::from_rows(const Tensor& rows, std::int64_t k_new) {
    if (rows.ndim() != 2 || rows.dim(0) < 1) {
        throw ConfigError("codebook needs a non-empty [K, d] matrix, got " + to_string(rows.shape()));
    }
    if (k_new < 0 || k_new > rows.dim(0)) {
        throw ConfigError("codebook: new words per step " + std::to_string(k_new) + " outside [0, " +
                          std::to_string(rows.dim(0)) + "]");
    }
    NoTapeGuard no_tape;
    Codebook cb;
    cb.entries = l2_normalize(rows.detach());
    cb.ages.assign(static_cast<std::size_t>(rows.dim(0)), -1);
    cb.k_new = k_new;
    return cb;
}

double TemperatureState::tau() const { return 1.0 / (10.0 * std::max(msd_ema, floor)); }

Assignment assign(const Tensor& teacher_tokens, const Codebook& cb, const TemperatureState& ts) {
    NoTapeGuard no_tape;
    Assignment a;
    a.sims = cosine_sim_matrix(teacher_tokens.detach(), cb.entries.to(teacher_tokens.dtype()));
    a.q = softmax_t(a.sims, ts.tau());
    return a;
}

double mean_similarity_difference(const Tensor& sims, std::int64_t batch) {
    if (sims.ndim() != 2 || batch <= 0 || sims.dim(0) % batch != 0) {
        throw ContractViolation("similarities " + to_string(sims.shape()) + " do not split into " +
                                std::to_string(batch) + " images");
    }
    const std::int64_t k = sims.dim(1);
    const std::int64_t per_image = sims.dim(0) / batch;
    return visit_dtype(sims.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto s = sims.data<T>();
        double total = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
            double image = 0.0;
            for (std::int64_t t = 0; t < per_image; ++t) {
                const T* row = s.data() + (b * per_image + t) * k;
                double mx = row[0];
                double sum = 0.0;
                for (std::int64_t j = 0; j < k; ++j) {
                    mx = std::max(mx, static_cast<double>(row[j]));
                    sum += row[j];
                }
                image += mx - sum / static_cast<double>(k);
            }
            total += image / static_cast<double>(per_image);
        }
        return total / static_cast<double>(batch);
    });
}

double update_temperature(TemperatureState& ts, double batch_msd) {
    ts.msd_ema = ts.momentum * ts.msd_ema + (1.0 - ts.momentum) * batch_msd;
    return ts.tau();
}

double update_temperature(TemperatureState& ts, const Tensor& sims, std::int64_t batch) {
    return update_temperature(ts, mean_similarity_difference(sims, batch));
}

std::vector<EnqueuedToken> enqueue(Codebook& cb, std::span<const Tensor> views, std::int64_t batch,
                                   std::span<const std::int64_t> image_ids, std::int64_t step, Rng& rng) {
    if (cb.k_new == 0) {
        return {};
    }
    if (views.empty() || static_cast<std::int64_t>(image_ids.size()) != batch || batch <= 0) {
        throw ContractViolation("enqueue: need at least one view and one id per image");
    }
    const std::int64_t d = cb.dim();
    const std::int64_t per_image = views[0].dim(0) / batch;
    for (const auto& v : views) {
        if (v.ndim() != 2 || v.dim(1) != d || v.dim(0) != batch * per_image) {
            throw ShapeError("enqueue: view " + to_string(v.shape()) + " does not match codebook width " +
                             std::to_string(d) + " and batch " + std::to_string(batch));
        }
    }
    // One candidate batch position per distinct image id.
    std::vector<std::int64_t> candidates;
    std::vector<std::int64_t> seen;
    for (std::int64_t b = 0; b < batch; ++b) {
        const std::int64_t id = image_ids[static_cast<std::size_t>(b)];
        if (std::find(seen.begin(), seen.end(), id) == seen.end()) {
            seen.push_back(id);
            candidates.push_back(b);
        }
    }
    if (static_cast<std::int64_t>(candidates.size()) < cb.k_new) {
        throw ConfigError("codebook: batch has " + std::to_string(candidates.size()) +
                          " distinct images, fewer than the " + std::to_string(cb.k_new) + " new words per step");
    }
    const auto picks = rng.sample_without_replacement(static_cast<std::int64_t>(candidates.size()), cb.k_new);
    std::vector<EnqueuedToken> written;
    NoTapeGuard no_tape;
    for (std::int64_t p : picks) {
        EnqueuedToken e;
        e.image = candidates[static_cast<std::size_t>(p)];
        e.view = rng.below(static_cast<std::int64_t>(views.size()));
        e.patch = rng.below(per_image);
        e.slot = cb.write_ptr;
        const std::vector<std::int64_t> row{e.image * per_image + e.patch};
        const Tensor token = l2_normalize(index_select(views[static_cast<std::size_t>(e.view)].detach(), row));
        const auto values = token.to_f64_vector();
        visit_dtype(cb.entries.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dst = cb.entries.mutable_data<T>();
            for (std::int64_t j = 0; j < d; ++j) {
                dst[static_cast<std::size_t>(e.slot * d + j)] = static_cast<T>(values[static_cast<std::size_t>(j)]);
            }
        });
        cb.ages[static_cast<std::size_t>(e.slot)] = step;
        cb.write_ptr = (cb.write_ptr + 1) % cb.size();
        written.push_back(e);
    }
    return written;
}

std::int64_t default_border(std::int64_t rows, std::int64_t cols) {
    return std::min<std::int64_t>(2, (std::min(rows, cols) - 1) / 2);
}

Tensor reduce_bow(const Tensor& q, std::int64_t batch, std::int64_t rows, std::int64_t cols, std::int64_t border) {
    if (border < 0) {
        throw ConfigError("border width must be non-negative, got " + std::to_string(border));
    }
    const std::int64_t inner_r = rows - 2 * border;
    const std::int64_t inner_c = cols - 2 * border;
    if (inner_r <= 0 || inner_c <= 0) {
        throw ConfigError("border width " + std::to_string(border) + " leaves no interior on a " +
                          std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    }
    if (q.ndim() != 2 || q.dim(0) != batch * rows * cols) {
        throw ShapeError("reduce_bow: assignments " + to_string(q.shape()) + " vs grid [" + std::to_string(batch) +
                         " x " + std::to_string(rows) + " x " + std::to_string(cols) + "]");
    }
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(batch * inner_r * inner_c));
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t r = border; r < rows - border; ++r) {
            for (std::int64_t c = border; c < cols - border; ++c) {
                idx.push_back((b * rows + r) * cols + c);
            }
        }
    }
    return mean(index_select(q, idx).reshape({batch, inner_r * inner_c, q.dim(1)}), 1);
}

} // namespace moca
