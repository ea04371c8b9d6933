// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Random token masking, partial decoding, second masking rounds and the
// condenser decoder input.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "moca/numerics/params.hpp"
#include "moca/numerics/rng.hpp"
#include "moca/numerics/tensor.hpp"
#include "moca/vit/vit.hpp"

namespace moca {

// Patch indices are 1-based; 0 is the global position and is never masked.
struct MaskPlan {
    std::vector<std::int64_t> u;      // visible, ascending
    std::vector<std::int64_t> m;      // masked, ascending
    std::vector<std::int64_t> m_dec;  // decoded subset of m, ascending
    int round = 1;
    double ratio = 0.0;
    double dec_fraction = 0.0;
};

// floor(x + 0.5).
std::int64_t round_count(double x);

// Masks round(ratio * N) patches drawn uniformly without replacement. m_dec is
// left empty; see select_partial and decode_all_masked.
MaskPlan sample_mask(std::int64_t n, double ratio, Rng& rng, int round = 1);

// Keeps round(dec_fraction * N) of the masked patches for decoding.
MaskPlan select_partial(MaskPlan plan, std::int64_t n, double dec_fraction, Rng& rng);

// Partial decoding off: every masked patch is decoded.
MaskPlan decode_all_masked(MaskPlan plan);

struct MaskSettings {
    double ratio_round1 = 0.55;
    double ratio_round2 = 0.75;
    double dec_fraction = 0.20;
    bool partial_decoding = true;
    bool second_round = true;
};

// Plans for every image of one view in one round. Image b draws from its own
// stream (seed, mask, step, index(round, view, b)).
std::vector<MaskPlan> sample_plans(const MaskSettings& s, int round, std::int64_t view, std::int64_t batch,
                                   std::int64_t n, std::uint64_t seed, std::int64_t step);

// A fresh independent round-2 mask. The returned targets are the round-1
// objects themselves; the teacher is not run again.
template <class Targets>
std::pair<std::vector<MaskPlan>, const Targets&> second_round(const MaskSettings& s, std::int64_t view,
                                                              std::int64_t batch, std::int64_t n, std::uint64_t seed,
                                                              std::int64_t step, const Targets& round1_targets) {
    return {sample_plans(s, 2, view, batch, n, seed, step), round1_targets};
}

std::vector<std::vector<std::int64_t>> visible_sets(std::span<const MaskPlan> plans);

struct DecoderInput {
    Tensor slots;  // [B * S, d_dec]
    std::int64_t batch = 0;
    std::int64_t slots_per_image = 0;
    std::int64_t global_slots = 0;  // 1 with the condenser, 0 without
    std::int64_t visible = 0;
    std::int64_t decoded = 0;
    // Rows of `slots` holding the mask slots, image-major, with their patch
    // indices in the same order.
    std::vector<std::int64_t> mask_rows;
    std::vector<std::int64_t> mask_patches;
    std::vector<std::int64_t> visible_rows;
    std::vector<std::int64_t> visible_patches;
};

// Condenser input per image: [proj(avg) + e0; proj(tap_i) + e_i for i in u;
// e_M + e_i for i in m_dec]. Without the condenser the global slot is dropped
// and the last-layer patch outputs replace the tap outputs.
DecoderInput build_decoder_input(const ParamTree& params, const ViTConfig& cfg, const EncoderOutput& enc,
                                 std::span<const MaskPlan> plans, bool condenser = true);

// 1 + |u| + |m_dec| for the given settings of one round.
std::int64_t decoder_slot_count(std::int64_t n, double ratio, double dec_fraction, bool partial);

} // namespace moca
