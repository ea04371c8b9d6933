// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prediction heads, the image-wise and token-wise losses, their combination,
// and the EMA teacher update.

#pragma once

#include <array>
#include <span>
#include <vector>

#include "moca/codebook/codebook.hpp"
#include "moca/masking/masking.hpp"
#include "moca/numerics/params.hpp"
#include "moca/numerics/tensor.hpp"
#include "moca/vit/vit.hpp"

namespace moca {

enum class GlobalToken { avg, cls };

struct LossConfig {
    double lambda = 0.5;
    double tau_b = 1.0 / 3.0;
    double tau_d = 1.0 / 3.0;
    // Also score decoder outputs at visible slots against the teacher.
    bool loss_on_visible = false;
    bool condenser = true;
    GlobalToken global_token = GlobalToken::avg;

    void validate() const;
};

// q_S = softmax_t(dec_out W_d^T, tau_d). dec_out is used as is.
Tensor predict_token_assignments(const Tensor& dec_out, const Tensor& w_d, double tau_d);
// y_S = softmax_t(g W_b^T, tau_b) for global embeddings g [B, d_enc].
Tensor predict_global_assignment(const Tensor& global, const Tensor& w_b, double tau_b);

// Per-view mean of CE(q_S, q_T) over decoded slots, averaged over views.
// Each q_S[v] and q_T[v] has one row per scored slot.
Tensor loss_loc(std::span<const Tensor> q_student, std::span<const Tensor> q_teacher);
// Batch mean of (CE(y_S1, y_T2) + CE(y_S2, y_T1)) / 2.
Tensor loss_img(const Tensor& y_student1, const Tensor& y_student2, const Tensor& y_teacher1,
                const Tensor& y_teacher2);
// lambda * img + (1 - lambda) * loc.
Tensor total_loss(const Tensor& img, const Tensor& loc, double lambda);

// theta_T <- alpha theta_T + (1 - alpha) theta_S for every teacher entry,
// matched by name in `student`.
void ema_update(ParamTree& teacher, const ParamTree& student, double alpha);

// Teacher-side quantities of one step, all detached.
struct TeacherTargets {
    std::array<Tensor, 2> tokens;  // [B * N, d_enc] last-layer patch outputs
    std::array<Tensor, 2> sims;    // [B * N, K]
    std::array<Tensor, 2> q;       // [B * N, K]
    std::array<Tensor, 2> y;       // [B, K]
    std::int64_t batch = 0;
    std::int64_t num_patches = 0;
    double tau = 0.0;
};

// Full, unmasked teacher passes over both views, then assign and reduce_bow
// at the current temperature. Runs without a tape.
TeacherTargets teacher_targets(const ParamTree& teacher, const ViTConfig& cfg, std::span<const Tensor> views,
                               const Codebook& cb, const TemperatureState& ts, std::int64_t border);

// Rows of q_T [B * N, K] for the given image-major (image, patch) pairs.
Tensor gather_targets(const Tensor& q_teacher, std::int64_t num_patches, std::span<const std::int64_t> patches,
                      std::int64_t per_image);

struct RoundLosses {
    Tensor total;
    Tensor img;
    Tensor loc;
};

// Student side of one masking round: masked encoder passes over both views,
// decoder, both heads and both losses.
RoundLosses student_round(const ParamTree& student, const ViTConfig& cfg, const LossConfig& lc,
                          std::span<const Tensor> views, std::span<const std::vector<MaskPlan>> plans,
                          const TeacherTargets& targets, const Tensor& w_b, const Tensor& w_d);

} // namespace moca
