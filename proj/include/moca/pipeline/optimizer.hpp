// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "moca/numerics/params.hpp"

namespace moca {

// Linear warm-up from 0 to `peak` over `warmup_steps`, then cosine decay to 0
// at `total_steps`. Steps are 1-based.
struct LrSchedule {
    double peak = 5e-4;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1;

    double at(std::int64_t t) const;
};

// Parameters exempt from weight decay: vectors (norm gains, biases) and the
// learned [CLS] and mask tokens.
bool exempt_from_weight_decay(const std::string& name, const Tensor& t);

// Adam moments with decoupled weight decay.
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    ParamTree m;
    ParamTree v;
    std::int64_t t = 0;  // updates applied so far

    // Zero moments shaped like `params`.
    void init(const ParamTree& params);

    // One update with learning rate `lr` using the gradients accumulated on
    // `params` (missing gradients count as zero). Increments t first.
    void step(ParamTree& params, double lr);
};

} // namespace moca
