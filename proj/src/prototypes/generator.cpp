// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/prototypes/generator.hpp"

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"
#include "moca/vit/vit.hpp"

namespace moca {

void add_generator(ParamTree& tree, const std::string& prefix, std::int64_t d_in, std::int64_t d_out,
                   std::uint64_t seed, DType dtype) {
    Rng rng(seed, Stream::init, 0, prefix == kGlobalGenerator ? 2 : 3);
    add_linear(tree, prefix + "fc1.", d_in, 2 * d_in, rng, dtype);
    add_norm(tree, prefix + "bn.", 2 * d_in, dtype);
    add_linear(tree, prefix + "fc2.", 2 * d_in, d_out, rng, dtype);
}

Tensor generate(const ParamTree& params, const std::string& prefix, const Tensor& codebook_rows) {
    if (codebook_rows.ndim() != 2 || codebook_rows.dim(0) < 2) {
        throw ConfigError("prototype generator needs at least 2 codebook entries for batch statistics, got " +
                          to_string(codebook_rows.shape()));
    }
    const Tensor& w1 = param(params, prefix + "fc1.weight");
    const Tensor c = codebook_rows.dtype() == w1.dtype() ? codebook_rows.detach() : codebook_rows.to(w1.dtype());
    const Tensor h = linear(params, prefix + "fc1.", l2_normalize(c));
    const Tensor n = batch_norm(h, param(params, prefix + "bn.gain"), param(params, prefix + "bn.bias"));
    return l2_normalize(linear(params, prefix + "fc2.", relu(n)));
}

} // namespace moca
