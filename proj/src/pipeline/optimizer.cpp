// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/pipeline/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "moca/errors.hpp"

namespace moca {

double LrSchedule::at(std::int64_t t) const {
    if (t < 1) {
        throw ContractViolation("learning-rate schedule is defined for steps >= 1, got " + std::to_string(t));
    }
    if (t <= warmup_steps) {
        return peak * static_cast<double>(t) / static_cast<double>(warmup_steps);
    }
    const std::int64_t span = total_steps - warmup_steps;
    if (span <= 0 || t >= total_steps) {
        return t >= total_steps ? 0.0 : peak;
    }
    const double progress = static_cast<double>(t - warmup_steps) / static_cast<double>(span);
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
}

bool exempt_from_weight_decay(const std::string& name, const Tensor& t) {
    return t.ndim() <= 1 || name.ends_with("mask_token") || name.ends_with("cls_token");
}

void AdamW::init(const ParamTree& params) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : params) {
        m.emplace(name, Tensor::zeros(p.shape(), p.dtype()));
        v.emplace(name, Tensor::zeros(p.shape(), p.dtype()));
    }
    t = 0;
}

void AdamW::step(ParamTree& params, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params) {
        auto mi = m.find(name);
        auto vi = v.find(name);
        if (mi == m.end() || vi == v.end()) {
            throw ContractViolation("optimizer has no state for '" + name + "'");
        }
        const Tensor g = p.grad();
        const double decay = exempt_from_weight_decay(name, p) ? 0.0 : weight_decay;
        visit_dtype(p.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto w = p.template mutable_data<T>();
            auto mm = mi->second.template mutable_data<T>();
            auto vv = vi->second.template mutable_data<T>();
            std::span<const T> gg;
            if (g.defined()) {
                gg = g.template data<T>();
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = gg.empty() ? 0.0 : static_cast<double>(gg[i]);
                const double m_new = beta1 * mm[i] + (1.0 - beta1) * gi;
                const double v_new = beta2 * vv[i] + (1.0 - beta2) * gi * gi;
                mm[i] = static_cast<T>(m_new);
                vv[i] = static_cast<T>(v_new);
                const double update = (m_new / bc1) / (std::sqrt(v_new / bc2) + eps);
                w[i] = static_cast<T>(w[i] - lr * (update + decay * w[i]));
            }
        });
    }
}

} // namespace moca
