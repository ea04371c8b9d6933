// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vision Transformer pieces shared by the student and the teacher: patch
// tokenization, fixed 2D sine-cosine positions, the encoder with an
// intermediate-layer tap, and the lightweight decoder.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moca/numerics/params.hpp"
#include "moca/numerics/rng.hpp"
#include "moca/numerics/tensor.hpp"

namespace moca {

struct ViTConfig {
    std::int64_t image_size = 32;
    std::int64_t patch_size = 4;
    std::int64_t channels = 3;
    std::int64_t depth = 6;
    std::int64_t heads = 4;
    std::int64_t d_enc = 128;
    std::int64_t d_dec = 64;
    std::int64_t dec_depth = 2;
    std::int64_t dec_heads = 4;
    // Encoder layer (1-based) whose outputs feed the condenser decoder.
    std::int64_t tap_layer = 4;
    std::int64_t mlp_ratio = 4;

    std::int64_t grid() const { return image_size / patch_size; }
    std::int64_t num_patches() const { return grid() * grid(); }
    std::int64_t patch_dim() const { return patch_size * patch_size * channels; }
    // Throws ConfigError on inconsistent settings.
    void validate() const;
};

// ceil(2 * depth / 3): 8 for the 12-layer base model, 4 for the 6-layer one.
std::int64_t default_tap_layer(std::int64_t depth);

// Patch tokens of a batch, rows grouped per image: row b * (1 + N) is the
// [CLS] token of image b, followed by its N patch tokens in raster order.
struct TokenSequence {
    Tensor tokens;  // [B * (1 + N), d_enc]
    std::int64_t batch = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;

    std::int64_t num_patches() const { return rows * cols; }
};

struct EncoderOutput {
    Tensor tap;    // [B * |u|, d_enc] tap-layer patch outputs after their own norm
    Tensor final;  // [B * |u|, d_enc] last-layer patch outputs after the final norm
    Tensor avg;    // [B, d_enc] mean of `final` over u
    Tensor cls;    // [B, d_enc] final-norm [CLS] output
    std::int64_t visible = 0;
};

// Parameters live under "encoder." and "decoder.". Weights are drawn from the
// init stream of `seed`; norms start at gain 1, bias 0.
ParamTree init_encoder(const ViTConfig& cfg, std::uint64_t seed, DType dtype = DType::f32);
ParamTree init_decoder(const ViTConfig& cfg, std::uint64_t seed, DType dtype = DType::f32);

// images: [B, H, W, C]. Linear projection of each non-overlapping patch with
// the learned [CLS] token prepended per image. Positions are added later.
TokenSequence patchify(const Tensor& images, const ParamTree& params, const ViTConfig& cfg);

// Raw pixel patches [B * N, P * P * C], (py, px, c) order within a patch.
Tensor extract_patches(const Tensor& images, const ViTConfig& cfg);

// Fixed [1 + N, d] table. Row 0 (the global position) is all zeros; row
// 1 + r * cols + c holds sin/cos of r in the first d/2 channels and of c in
// the rest.
Tensor sincos_positions(std::int64_t rows, std::int64_t cols, std::int64_t d, DType dtype = DType::f64);

// Runs the encoder on the [CLS] token plus the patch tokens listed in
// visible[b] (1-based patch indices) for every image b. All images must keep
// the same number of tokens.
EncoderOutput encode(const ParamTree& params, const ViTConfig& cfg, const TokenSequence& seq,
                     std::span<const std::vector<std::int64_t>> visible);

// Every patch visible, as used by the teacher.
std::vector<std::vector<std::int64_t>> all_visible(std::int64_t batch, std::int64_t num_patches);

// Decoder transformer over assembled slots [B * S, d_dec]. With dec_depth 0
// the input is returned unchanged.
Tensor decode(const ParamTree& params, const ViTConfig& cfg, const Tensor& slots, std::int64_t batch);

// Pre-norm transformer block with parameters under `prefix`, applied to
// [B * L, d].
Tensor transformer_block(const ParamTree& params, const std::string& prefix, const Tensor& x, std::int64_t batch,
                         std::int64_t heads);

// x @ W + b for parameters "<prefix>weight" [in, out] and "<prefix>bias" [out].
Tensor linear(const ParamTree& params, const std::string& prefix, const Tensor& x);

// Adds "<prefix>weight" (Xavier-uniform) and "<prefix>bias" (zeros).
void add_linear(ParamTree& tree, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                DType dtype);
void add_norm(ParamTree& tree, const std::string& prefix, std::int64_t d, DType dtype);

} // namespace moca
