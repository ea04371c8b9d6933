// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/objectives/objectives.hpp"

#include <string>

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"

namespace moca {

void LossConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("loss weighting parameter lambda " + std::to_string(lambda) + " outside [0, 1]");
    }
    if (!(tau_b > 0.0) || !(tau_d > 0.0)) {
        throw ConfigError("student temperatures must be positive");
    }
}

Tensor predict_token_assignments(const Tensor& dec_out, const Tensor& w_d, double tau_d) {
    return softmax_t(matmul(dec_out, w_d, true), tau_d);
}

Tensor predict_global_assignment(const Tensor& global, const Tensor& w_b, double tau_b) {
    return softmax_t(matmul(global, w_b, true), tau_b);
}

Tensor loss_loc(std::span<const Tensor> q_student, std::span<const Tensor> q_teacher) {
    if (q_student.size() != q_teacher.size() || q_student.empty()) {
        throw ContractViolation("loss_loc: need one student and one teacher assignment set per view");
    }
    Tensor acc;
    for (std::size_t v = 0; v < q_student.size(); ++v) {
        const Tensor term = mean_all(cross_entropy(q_student[v], q_teacher[v].detach()));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(q_student.size()));
}

Tensor loss_img(const Tensor& y_student1, const Tensor& y_student2, const Tensor& y_teacher1,
                const Tensor& y_teacher2) {
    const Tensor a = cross_entropy(y_student1, y_teacher2.detach());
    const Tensor b = cross_entropy(y_student2, y_teacher1.detach());
    return scale(mean_all(add(a, b)), 0.5);
}

Tensor total_loss(const Tensor& img, const Tensor& loc, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("lambda " + std::to_string(lambda) + " outside [0, 1]");
    }
    if (lambda == 1.0) {
        return img;
    }
    if (lambda == 0.0) {
        return loc;
    }
    return add(scale(img, lambda), scale(loc, 1.0 - lambda));
}

void ema_update(ParamTree& teacher, const ParamTree& student, double alpha) {
    for (auto& [name, t] : teacher) {
        auto it = student.find(name);
        if (it == student.end()) {
            throw ContractViolation("ema_update: student has no parameter '" + name + "'");
        }
        const Tensor& s = it->second;
        if (s.shape() != t.shape() || s.dtype() != t.dtype()) {
            throw ContractViolation("ema_update: '" + name + "' is " + to_string(t.shape()) + " in the teacher and " +
                                    to_string(s.shape()) + " in the student");
        }
        visit_dtype(t.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dst = t.template mutable_data<T>();
            const auto src = s.template data<T>();
            const auto a = static_cast<T>(alpha);
            const auto b = static_cast<T>(1.0 - alpha);
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] = a * dst[i] + b * src[i];
            }
        });
    }
}

TeacherTargets teacher_targets(const ParamTree& teacher, const ViTConfig& cfg, std::span<const Tensor> views,
                               const Codebook& cb, const TemperatureState& ts, std::int64_t border) {
    if (views.size() != 2) {
        throw ContractViolation("teacher_targets: expected two views");
    }
    NoTapeGuard no_tape;
    TeacherTargets out;
    out.batch = views[0].dim(0);
    out.num_patches = cfg.num_patches();
    out.tau = ts.tau();
    const auto visible = all_visible(out.batch, out.num_patches);
    for (std::size_t v = 0; v < 2; ++v) {
        const EncoderOutput enc = encode(teacher, cfg, patchify(views[v], teacher, cfg), visible);
        out.tokens[v] = enc.final;
        const Assignment a = assign(enc.final, cb, ts);
        out.sims[v] = a.sims;
        out.q[v] = a.q;
        out.y[v] = reduce_bow(a.q, out.batch, cfg.grid(), cfg.grid(), border);
    }
    return out;
}

Tensor gather_targets(const Tensor& q_teacher, std::int64_t num_patches, std::span<const std::int64_t> patches,
                      std::int64_t per_image) {
    std::vector<std::int64_t> rows;
    rows.reserve(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto image = per_image > 0 ? static_cast<std::int64_t>(i) / per_image : 0;
        rows.push_back(image * num_patches + patches[i] - 1);
    }
    NoTapeGuard no_tape;
    return index_select(q_teacher.detach(), rows);
}

RoundLosses student_round(const ParamTree& student, const ViTConfig& cfg, const LossConfig& lc,
                          std::span<const Tensor> views, std::span<const std::vector<MaskPlan>> plans,
                          const TeacherTargets& targets, const Tensor& w_b, const Tensor& w_d) {
    if (views.size() != 2 || plans.size() != 2) {
        throw ContractViolation("student_round: expected two views and two plan sets");
    }
    std::array<Tensor, 2> y_student;
    std::vector<Tensor> q_student;
    std::vector<Tensor> q_teacher;
    for (std::size_t v = 0; v < 2; ++v) {
        const auto u = visible_sets(plans[v]);
        const EncoderOutput enc = encode(student, cfg, patchify(views[v], student, cfg), u);
        y_student[v] =
            predict_global_assignment(lc.global_token == GlobalToken::avg ? enc.avg : enc.cls, w_b, lc.tau_b);

        const DecoderInput z = build_decoder_input(student, cfg, enc, plans[v], lc.condenser);
        const Tensor dec = decode(student, cfg, z.slots, z.batch);
        std::vector<std::int64_t> rows = z.mask_rows;
        std::vector<std::int64_t> patches = z.mask_patches;
        std::int64_t per_image = z.decoded;
        if (lc.loss_on_visible) {
            rows.clear();
            patches.clear();
            for (std::int64_t b = 0; b < z.batch; ++b) {
                for (std::int64_t j = 0; j < z.visible; ++j) {
                    rows.push_back(z.visible_rows[static_cast<std::size_t>(b * z.visible + j)]);
                    patches.push_back(z.visible_patches[static_cast<std::size_t>(b * z.visible + j)]);
                }
                for (std::int64_t j = 0; j < z.decoded; ++j) {
                    rows.push_back(z.mask_rows[static_cast<std::size_t>(b * z.decoded + j)]);
                    patches.push_back(z.mask_patches[static_cast<std::size_t>(b * z.decoded + j)]);
                }
            }
            per_image = z.visible + z.decoded;
        }
        if (rows.empty()) {
            continue;
        }
        q_student.push_back(predict_token_assignments(index_select(dec, rows), w_d, lc.tau_d));
        q_teacher.push_back(gather_targets(targets.q[v], targets.num_patches, patches, per_image));
    }
    RoundLosses out;
    out.img = loss_img(y_student[0], y_student[1], targets.y[0], targets.y[1]);
    out.loc = q_student.empty() ? scale(out.img, 0.0) : loss_loc(q_student, q_teacher);
    out.total = total_loss(out.img, out.loc, lc.lambda);
    return out;
}

} // namespace moca
