// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "moca/numerics/tensor.hpp"

namespace moca {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_input;
    std::int64_t worst_index = -1;
    std::int64_t entries_checked = 0;
};

// Relative error used by the gradient checks: |a - b| / max(|a|, |b|, floor)
// with floor = kGradCheckFloor * max(1, |f(x)|). Central differences lose
// about eps * |f| / h to rounding, so entries whose true gradient is zero are
// judged against the scale of f rather than against that rounding noise.
inline constexpr double kGradCheckFloor = 1e-6;

// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h for
// every entry of every input. `f` must recompute a scalar from the current
// contents of `inputs`, which must be f64 leaves that require a gradient.
// `names` (optional) labels the inputs in the report. Inputs are restored.
GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                                        double h = 1e-5, std::span<const std::string> names = {});

// Single-input convenience form.
GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                        double h = 1e-5);

} // namespace moca
