// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "moca/codebook/codebook.hpp"
#include "moca/numerics/params.hpp"
#include "moca/numerics/tensor.hpp"

namespace moca {

// Parameter prefixes of the two generators.
inline const std::string kGlobalGenerator = "gen_b.";
inline const std::string kTokenGenerator = "gen_d.";

// Adds "<prefix>fc1", "<prefix>bn" and "<prefix>fc2" for a generator mapping
// d_in -> 2 d_in -> d_out.
void add_generator(ParamTree& tree, const std::string& prefix, std::int64_t d_in, std::int64_t d_out,
                   std::uint64_t seed, DType dtype = DType::f32);

// W[k] = L2Norm(fc2(ReLU(BN(fc1(L2Norm(c_k)))))) for every codebook row.
// Batch statistics run over the K rows of this call. The rows themselves are
// treated as constants; gradients reach the generator parameters only.
Tensor generate(const ParamTree& params, const std::string& prefix, const Tensor& codebook_rows);
inline Tensor generate(const ParamTree& params, const std::string& prefix, const Codebook& cb) {
    return generate(params, prefix, cb.entries);
}

} // namespace moca
