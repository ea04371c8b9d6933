// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/masking/masking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"

namespace moca {

std::int64_t round_count(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

MaskPlan sample_mask(std::int64_t n, double ratio, Rng& rng, int round) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ConfigError("mask ratio " + std::to_string(ratio) + " outside [0, 1)");
    }
    const std::int64_t masked = round_count(ratio * static_cast<double>(n));
    if (masked >= n) {
        throw ConfigError("mask ratio " + std::to_string(ratio) + " leaves no visible token out of " +
                          std::to_string(n));
    }
    MaskPlan plan;
    plan.round = round;
    plan.ratio = ratio;
    std::vector<char> is_masked(static_cast<std::size_t>(n), 0);
    for (std::int64_t i : rng.sample_without_replacement(n, masked)) {
        is_masked[static_cast<std::size_t>(i)] = 1;
    }
    for (std::int64_t i = 0; i < n; ++i) {
        (is_masked[static_cast<std::size_t>(i)] ? plan.m : plan.u).push_back(i + 1);
    }
    return plan;
}

MaskPlan select_partial(MaskPlan plan, std::int64_t n, double dec_fraction, Rng& rng) {
    if (dec_fraction < 0.0) {
        throw ConfigError("decoded fraction must be non-negative");
    }
    const std::int64_t k = round_count(dec_fraction * static_cast<double>(n));
    const auto masked = static_cast<std::int64_t>(plan.m.size());
    if (k > masked) {
        throw ConfigError("cannot decode " + std::to_string(k) + " tokens out of " + std::to_string(masked) +
                          " masked ones");
    }
    plan.dec_fraction = dec_fraction;
    plan.m_dec.clear();
    for (std::int64_t i : rng.sample_without_replacement(masked, k)) {
        plan.m_dec.push_back(plan.m[static_cast<std::size_t>(i)]);
    }
    std::sort(plan.m_dec.begin(), plan.m_dec.end());
    return plan;
}

MaskPlan decode_all_masked(MaskPlan plan) {
    plan.m_dec = plan.m;
    plan.dec_fraction = plan.ratio;
    return plan;
}

std::vector<MaskPlan> sample_plans(const MaskSettings& s, int round, std::int64_t view, std::int64_t batch,
                                   std::int64_t n, std::uint64_t seed, std::int64_t step) {
    const double ratio = round == 1 ? s.ratio_round1 : s.ratio_round2;
    std::vector<MaskPlan> plans;
    plans.reserve(static_cast<std::size_t>(batch));
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto index = (static_cast<std::uint64_t>(round * 4 + view) << 32) | static_cast<std::uint64_t>(b);
        Rng rng(seed, Stream::mask, static_cast<std::uint64_t>(step), index);
        MaskPlan plan = sample_mask(n, ratio, rng, round);
        plans.push_back(s.partial_decoding ? select_partial(std::move(plan), n, s.dec_fraction, rng)
                                           : decode_all_masked(std::move(plan)));
    }
    return plans;
}

std::vector<std::vector<std::int64_t>> visible_sets(std::span<const MaskPlan> plans) {
    std::vector<std::vector<std::int64_t>> out;
    out.reserve(plans.size());
    for (const auto& p : plans) {
        out.push_back(p.u);
    }
    return out;
}

DecoderInput build_decoder_input(const ParamTree& params, const ViTConfig& cfg, const EncoderOutput& enc,
                                 std::span<const MaskPlan> plans, bool condenser) {
    const auto b = static_cast<std::int64_t>(plans.size());
    if (b == 0 || enc.avg.dim(0) != b) {
        throw ContractViolation("build_decoder_input: " + std::to_string(plans.size()) + " plans for encoder batch " +
                                std::to_string(enc.avg.dim(0)));
    }
    const auto nu = static_cast<std::int64_t>(plans[0].u.size());
    const auto nd = static_cast<std::int64_t>(plans[0].m_dec.size());
    for (const auto& p : plans) {
        if (static_cast<std::int64_t>(p.u.size()) != nu || static_cast<std::int64_t>(p.m_dec.size()) != nd) {
            throw ContractViolation("build_decoder_input: plans differ in size across the batch");
        }
    }
    if (nu != enc.visible) {
        throw ContractViolation("build_decoder_input: plans keep " + std::to_string(nu) +
                                " tokens but the encoder saw " + std::to_string(enc.visible));
    }

    DecoderInput z;
    z.batch = b;
    z.global_slots = condenser ? 1 : 0;
    z.visible = nu;
    z.decoded = nd;
    z.slots_per_image = z.global_slots + nu + nd;

    // Pool rows: [global (B rows, condenser only); visible (B * |u| rows); mask token].
    std::vector<Tensor> parts;
    if (condenser) {
        parts.push_back(linear(params, "decoder.embed.", enc.avg));
        parts.push_back(linear(params, "decoder.embed.", enc.tap));
    } else {
        parts.push_back(linear(params, "decoder.embed.", enc.final));
    }
    parts.push_back(param(params, "decoder.mask_token"));
    const Tensor pool = concat(parts, 0);
    const std::int64_t visible_base = condenser ? b : 0;
    const std::int64_t mask_row = visible_base + b * nu;

    const Tensor table = sincos_positions(cfg.grid(), cfg.grid(), cfg.d_dec);
    const auto table_data = table.data<double>();
    const std::int64_t d = cfg.d_dec;
    std::vector<std::int64_t> idx;
    std::vector<double> pos;
    idx.reserve(static_cast<std::size_t>(b * z.slots_per_image));
    pos.reserve(static_cast<std::size_t>(b * z.slots_per_image * d));
    auto push = [&](std::int64_t pool_row, std::int64_t position) {
        idx.push_back(pool_row);
        const double* row = table_data.data() + position * d;
        pos.insert(pos.end(), row, row + d);
    };
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& plan = plans[static_cast<std::size_t>(i)];
        if (condenser) {
            push(i, 0);
        }
        for (std::int64_t j = 0; j < nu; ++j) {
            z.visible_rows.push_back(static_cast<std::int64_t>(idx.size()));
            z.visible_patches.push_back(plan.u[static_cast<std::size_t>(j)]);
            push(visible_base + i * nu + j, plan.u[static_cast<std::size_t>(j)]);
        }
        for (std::int64_t t : plan.m_dec) {
            z.mask_rows.push_back(static_cast<std::int64_t>(idx.size()));
            z.mask_patches.push_back(t);
            push(mask_row, t);
        }
    }
    const Tensor positions =
        Tensor::from_f64({static_cast<std::int64_t>(idx.size()), d}, pos, enc.avg.dtype());
    z.slots = add(index_select(pool, idx), positions);
    return z;
}

std::int64_t decoder_slot_count(std::int64_t n, double ratio, double dec_fraction, bool partial) {
    const std::int64_t masked = round_count(ratio * static_cast<double>(n));
    const std::int64_t decoded = partial ? round_count(dec_fraction * static_cast<double>(n)) : masked;
    return 1 + (n - masked) + decoded;
}

} // namespace moca
