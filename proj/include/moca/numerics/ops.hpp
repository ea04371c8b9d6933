// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Every function validates shapes up front and
// throws ShapeError naming the offending shapes. Operands must share a dtype.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moca/numerics/tensor.hpp"

namespace moca {

// a[n,k] . b[k,m], or a[n,k] . b[m,k]^T when transpose_b is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[n,m] + bias[m] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor concat(std::span<const Tensor> parts, int axis = 0);
// Gathers slices of the leading axis. Indices may repeat; gradients of
// repeated rows accumulate.
Tensor index_select(const Tensor& x, std::span<const std::int64_t> indices);

Tensor mean(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Normalizes each row over the last axis, then applies gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
// Normalizes each column of x[n,m] with statistics over the n rows (biased
// variance, current-batch statistics only).
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

inline constexpr double kNormFloor = 1e-8;

// x / max(||x||, eps) along the last axis.
Tensor l2_normalize(const Tensor& x, double eps = kNormFloor);

// softmax(x / temperature) along the last axis, max-subtracted.
Tensor softmax_t(const Tensor& x, double temperature);

inline constexpr double kLogClamp = 1e-12;

// -sum_k target[k] * log(max(pred[k], 1e-12)) along the last axis. Result
// drops the last axis. Both operands must be distributions within 1e-5.
Tensor cross_entropy(const Tensor& pred, const Tensor& target);

// Cosine similarities of rows: a[n,d], b[k,d] -> [n,k].
Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b);

// Multi-head scaled dot-product self-attention over `batch` sequences of
// equal length. qkv is [batch*len, 3*d] laid out as [q | k | v] per row;
// result is [batch*len, d] with heads concatenated.
Tensor multi_head_attention(const Tensor& qkv, std::int64_t batch, std::int64_t heads);

} // namespace moca
