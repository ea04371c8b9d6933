// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace moca {

GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h,
                                        std::span<const std::string> names) {
    for (auto& x : inputs) {
        if (x.dtype() != DType::f64) {
            throw ContractViolation("finite_difference_check: inputs must be f64");
        }
        if (!x.is_leaf() || !x.requires_grad()) {
            throw ContractViolation("finite_difference_check: inputs must be leaves that require grad");
        }
        x.zero_grad();
    }

    std::vector<std::vector<double>> analytic;
    double floor = kGradCheckFloor;
    {
        Tape tape;
        const Tensor y = f();
        if (y.numel() != 1) {
            throw ContractViolation("finite_difference_check: f must be scalar-valued, got " + to_string(y.shape()));
        }
        floor *= std::max(1.0, std::abs(y.item()));
        tape.backward(y);
    }
    for (auto& x : inputs) {
        const Tensor g = x.grad();
        analytic.push_back(g.defined() ? g.to_f64_vector() : std::vector<double>(x.numel(), 0.0));
        x.zero_grad();
    }

    GradCheckReport report;
    NoTapeGuard no_tape;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto values = inputs[t].mutable_data<double>();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double up = f().item();
            values[i] = saved - h;
            const double down = f().item();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[t][i];
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel_err > report.max_rel_error || report.worst_index < 0) {
                report.max_rel_error = std::max(report.max_rel_error, rel_err);
                report.worst_index = static_cast<std::int64_t>(i);
                report.worst_input = t < names.size() ? names[t] : "input" + std::to_string(t);
            }
            ++report.entries_checked;
        }
    }
    return report;
}

GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor input = x.clone();
    input.set_requires_grad(true);
    std::vector<Tensor> inputs{input};
    return finite_difference_check([&] { return f(input); }, inputs, h);
}

} // namespace moca
