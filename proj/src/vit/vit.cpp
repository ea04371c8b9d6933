// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/vit/vit.hpp"

#include <cmath>

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"

namespace moca {

namespace {

std::string block_prefix(const std::string& stack, std::int64_t i) {
    return stack + "blocks." + std::to_string(i) + ".";
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng, DType dtype) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) {
        x = stddev * rng.normal();
    }
    return Tensor::from_f64(std::move(shape), v, dtype);
}

void add_block(ParamTree& tree, const std::string& prefix, std::int64_t d, std::int64_t mlp_ratio, Rng& rng,
               DType dtype) {
    add_norm(tree, prefix + "norm1.", d, dtype);
    add_linear(tree, prefix + "attn.qkv.", d, 3 * d, rng, dtype);
    add_linear(tree, prefix + "attn.proj.", d, d, rng, dtype);
    add_norm(tree, prefix + "norm2.", d, dtype);
    add_linear(tree, prefix + "mlp.fc1.", d, mlp_ratio * d, rng, dtype);
    add_linear(tree, prefix + "mlp.fc2.", mlp_ratio * d, d, rng, dtype);
}

Tensor norm(const ParamTree& params, const std::string& prefix, const Tensor& x) {
    return layer_norm(x, param(params, prefix + "gain"), param(params, prefix + "bias"));
}

// Rows `rows` of the position table, converted to `dtype`.
Tensor gather_positions(const Tensor& table, std::span<const std::int64_t> rows, DType dtype) {
    const std::int64_t d = table.dim(1);
    const auto src = table.data<double>();
    std::vector<double> out;
    out.reserve(rows.size() * static_cast<std::size_t>(d));
    for (std::int64_t r : rows) {
        const auto* p = src.data() + r * d;
        out.insert(out.end(), p, p + d);
    }
    return Tensor::from_f64({static_cast<std::int64_t>(rows.size()), d}, out, dtype);
}

} // namespace

void ViTConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
             std::to_string(patch_size));
    }
    if (channels <= 0) {
        fail("channels must be positive");
    }
    if (depth < 1) {
        fail("depth must be at least 1");
    }
    if (tap_layer < 1 || tap_layer > depth) {
        fail("intermediate layer " + std::to_string(tap_layer) + " outside [1, " + std::to_string(depth) + "]");
    }
    if (heads <= 0 || d_enc % heads != 0) {
        fail("embedding size " + std::to_string(d_enc) + " not divisible by " + std::to_string(heads) + " heads");
    }
    if (dec_depth < 0) {
        fail("decoder depth must be non-negative");
    }
    if (dec_depth > 0 && (dec_heads <= 0 || d_dec % dec_heads != 0)) {
        fail("decoder embedding size " + std::to_string(d_dec) + " not divisible by " + std::to_string(dec_heads) +
             " heads");
    }
    if (d_enc % 4 != 0 || d_dec % 4 != 0) {
        fail("embedding sizes must be divisible by 4 for 2D sine-cosine positions");
    }
    if (mlp_ratio <= 0) {
        fail("mlp ratio must be positive");
    }
}

std::int64_t default_tap_layer(std::int64_t depth) { return (2 * depth + 2) / 3; }

void add_linear(ParamTree& tree, const std::string& prefix, std::int64_t in, std::int64_t out, Rng& rng,
                DType dtype) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(static_cast<std::size_t>(in * out));
    for (auto& x : w) {
        x = rng.uniform(-limit, limit);
    }
    tree[prefix + "weight"] = Tensor::from_f64({in, out}, w, dtype);
    tree[prefix + "bias"] = Tensor::zeros({out}, dtype);
}

void add_norm(ParamTree& tree, const std::string& prefix, std::int64_t d, DType dtype) {
    tree[prefix + "gain"] = Tensor::full({d}, 1.0, dtype);
    tree[prefix + "bias"] = Tensor::zeros({d}, dtype);
}

ParamTree init_encoder(const ViTConfig& cfg, std::uint64_t seed, DType dtype) {
    cfg.validate();
    Rng rng(seed, Stream::init, 0, 0);
    ParamTree tree;
    const std::int64_t d = cfg.d_enc;
    add_linear(tree, "encoder.patch_embed.", cfg.patch_dim(), d, rng, dtype);
    tree["encoder.cls_token"] = normal_tensor({1, d}, 0.02, rng, dtype);
    for (std::int64_t i = 0; i < cfg.depth; ++i) {
        add_block(tree, block_prefix("encoder.", i), d, cfg.mlp_ratio, rng, dtype);
    }
    add_norm(tree, "encoder.tap_norm.", d, dtype);
    add_norm(tree, "encoder.final_norm.", d, dtype);
    return tree;
}

ParamTree init_decoder(const ViTConfig& cfg, std::uint64_t seed, DType dtype) {
    cfg.validate();
    Rng rng(seed, Stream::init, 0, 1);
    ParamTree tree;
    add_linear(tree, "decoder.embed.", cfg.d_enc, cfg.d_dec, rng, dtype);
    tree["decoder.mask_token"] = normal_tensor({1, cfg.d_dec}, 0.02, rng, dtype);
    for (std::int64_t i = 0; i < cfg.dec_depth; ++i) {
        add_block(tree, block_prefix("decoder.", i), cfg.d_dec, cfg.mlp_ratio, rng, dtype);
    }
    return tree;
}

Tensor linear(const ParamTree& params, const std::string& prefix, const Tensor& x) {
    return add_bias(matmul(x, param(params, prefix + "weight")), param(params, prefix + "bias"));
}

Tensor extract_patches(const Tensor& images, const ViTConfig& cfg) {
    if (images.ndim() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
        images.dim(3) != cfg.channels) {
        throw ConfigError("patchify: expected images [B, " + std::to_string(cfg.image_size) + ", " +
                          std::to_string(cfg.image_size) + ", " + std::to_string(cfg.channels) + "], got " +
                          to_string(images.shape()));
    }
    const std::int64_t b = images.dim(0);
    const std::int64_t g = cfg.grid();
    const std::int64_t p = cfg.patch_size;
    const std::int64_t c = cfg.channels;
    const std::int64_t s = cfg.image_size;
    Tensor out = Tensor::zeros({b * g * g, cfg.patch_dim()}, images.dtype());
    visit_dtype(images.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto src = images.data<T>();
        auto dst = out.mutable_data<T>();
        std::size_t k = 0;
        for (std::int64_t n = 0; n < b; ++n) {
            for (std::int64_t gr = 0; gr < g; ++gr) {
                for (std::int64_t gc = 0; gc < g; ++gc) {
                    for (std::int64_t py = 0; py < p; ++py) {
                        const std::int64_t row = gr * p + py;
                        const std::int64_t base = ((n * s + row) * s + gc * p) * c;
                        for (std::int64_t q = 0; q < p * c; ++q) {
                            dst[k++] = src[static_cast<std::size_t>(base + q)];
                        }
                    }
                }
            }
        }
    });
    return out;
}

TokenSequence patchify(const Tensor& images, const ParamTree& params, const ViTConfig& cfg) {
    const Tensor& w = param(params, "encoder.patch_embed.weight");
    const Tensor patches = extract_patches(images.dtype() == w.dtype() ? images : images.to(w.dtype()), cfg);
    const Tensor projected = linear(params, "encoder.patch_embed.", patches);
    const std::int64_t b = images.dim(0);
    const std::int64_t n = cfg.num_patches();
    const std::vector<Tensor> parts{param(params, "encoder.cls_token"), projected};
    const Tensor pool = concat(parts, 0);
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(b * (1 + n)));
    for (std::int64_t i = 0; i < b; ++i) {
        idx.push_back(0);
        for (std::int64_t j = 0; j < n; ++j) {
            idx.push_back(1 + i * n + j);
        }
    }
    return TokenSequence{index_select(pool, idx), b, cfg.grid(), cfg.grid()};
}

Tensor sincos_positions(std::int64_t rows, std::int64_t cols, std::int64_t d, DType dtype) {
    if (d <= 0 || d % 4 != 0) {
        throw ConfigError("sine-cosine positions need a width divisible by 4, got " + std::to_string(d));
    }
    const std::int64_t n = rows * cols;
    const std::int64_t quarter = d / 4;
    std::vector<double> table(static_cast<std::size_t>((1 + n) * d), 0.0);
    auto fill = [&](double* out, double pos) {
        for (std::int64_t i = 0; i < quarter; ++i) {
            const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
            out[i] = std::sin(pos * omega);
            out[quarter + i] = std::cos(pos * omega);
        }
    };
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            double* row = table.data() + (1 + r * cols + c) * d;
            fill(row, static_cast<double>(r));
            fill(row + d / 2, static_cast<double>(c));
        }
    }
    return Tensor::from_f64({1 + n, d}, table, dtype);
}

std::vector<std::vector<std::int64_t>> all_visible(std::int64_t batch, std::int64_t num_patches) {
    std::vector<std::int64_t> u(static_cast<std::size_t>(num_patches));
    for (std::int64_t i = 0; i < num_patches; ++i) {
        u[static_cast<std::size_t>(i)] = i + 1;
    }
    return std::vector<std::vector<std::int64_t>>(static_cast<std::size_t>(batch), u);
}

Tensor transformer_block(const ParamTree& params, const std::string& prefix, const Tensor& x, std::int64_t batch,
                         std::int64_t heads) {
    const Tensor qkv = linear(params, prefix + "attn.qkv.", norm(params, prefix + "norm1.", x));
    const Tensor attended = linear(params, prefix + "attn.proj.", multi_head_attention(qkv, batch, heads));
    const Tensor h = add(x, attended);
    const Tensor hidden = gelu(linear(params, prefix + "mlp.fc1.", norm(params, prefix + "norm2.", h)));
    return add(h, linear(params, prefix + "mlp.fc2.", hidden));
}

EncoderOutput encode(const ParamTree& params, const ViTConfig& cfg, const TokenSequence& seq,
                     std::span<const std::vector<std::int64_t>> visible) {
    const std::int64_t b = seq.batch;
    const std::int64_t n = seq.num_patches();
    if (static_cast<std::int64_t>(visible.size()) != b) {
        throw ContractViolation("encode: " + std::to_string(visible.size()) + " visible sets for a batch of " +
                                std::to_string(b));
    }
    const std::int64_t nu = b > 0 ? static_cast<std::int64_t>(visible[0].size()) : 0;
    if (nu == 0) {
        throw ContractViolation("encode: the visible set u is empty");
    }
    const std::int64_t len = 1 + nu;
    std::vector<std::int64_t> rows;
    std::vector<std::int64_t> pos_rows;
    rows.reserve(static_cast<std::size_t>(b * len));
    pos_rows.reserve(static_cast<std::size_t>(b * len));
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& u = visible[static_cast<std::size_t>(i)];
        if (static_cast<std::int64_t>(u.size()) != nu) {
            throw ContractViolation("encode: visible sets differ in size across the batch");
        }
        rows.push_back(i * (1 + n));
        pos_rows.push_back(0);
        for (std::int64_t t : u) {
            if (t < 1 || t > n) {
                throw ContractViolation("encode: patch index " + std::to_string(t) + " outside [1, " +
                                        std::to_string(n) + "]");
            }
            rows.push_back(i * (1 + n) + t);
            pos_rows.push_back(t);
        }
    }
    const DType dt = seq.tokens.dtype();
    const Tensor table = sincos_positions(seq.rows, seq.cols, cfg.d_enc);
    Tensor x = add(index_select(seq.tokens, rows), gather_positions(table, pos_rows, dt));

    std::vector<std::int64_t> patch_rows;
    std::vector<std::int64_t> cls_rows;
    patch_rows.reserve(static_cast<std::size_t>(b * nu));
    for (std::int64_t i = 0; i < b; ++i) {
        cls_rows.push_back(i * len);
        for (std::int64_t j = 1; j < len; ++j) {
            patch_rows.push_back(i * len + j);
        }
    }

    EncoderOutput out;
    out.visible = nu;
    for (std::int64_t layer = 1; layer <= cfg.depth; ++layer) {
        x = transformer_block(params, block_prefix("encoder.", layer - 1), x, b, cfg.heads);
        if (layer == cfg.tap_layer) {
            out.tap = norm(params, "encoder.tap_norm.", index_select(x, patch_rows));
        }
    }
    const Tensor normed = norm(params, "encoder.final_norm.", x);
    out.final = index_select(normed, patch_rows);
    out.cls = index_select(normed, cls_rows);
    out.avg = mean(out.final.reshape({b, nu, cfg.d_enc}), 1);
    return out;
}

Tensor decode(const ParamTree& params, const ViTConfig& cfg, const Tensor& slots, std::int64_t batch) {
    if (slots.ndim() != 2 || slots.dim(1) != cfg.d_dec) {
        throw ConfigError("decode: slots " + to_string(slots.shape()) + " do not match decoder width " +
                          std::to_string(cfg.d_dec));
    }
    if (batch <= 0 || slots.dim(0) % batch != 0) {
        throw ContractViolation("decode: " + std::to_string(slots.dim(0)) + " slots do not split into " +
                                std::to_string(batch) + " images");
    }
    Tensor x = slots;
    for (std::int64_t i = 0; i < cfg.dec_depth; ++i) {
        x = transformer_block(params, block_prefix("decoder.", i), x, batch, cfg.dec_heads);
    }
    return x;
}

} // namespace moca
