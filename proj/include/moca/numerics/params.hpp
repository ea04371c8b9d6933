// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>

#include "moca/numerics/tensor.hpp"

namespace moca {

// Named parameter tensors. Ordered by name so that iteration, checkpoints and
// optimizer state never depend on insertion order.
using ParamTree = std::map<std::string, Tensor>;

// Looks up `name`, throwing ContractViolation when absent.
const Tensor& param(const ParamTree& tree, const std::string& name);

// Detached deep copies of every entry whose name starts with `prefix`.
ParamTree clone_tree(const ParamTree& tree, std::string_view prefix = {});

// Throws ContractViolation unless `b` has the same names, shapes and dtypes as
// the `prefix` subtree of `a`.
void check_isomorphic(const ParamTree& a, const ParamTree& b, std::string_view prefix = {});

void set_requires_grad(ParamTree& tree, bool value);
void zero_grad(ParamTree& tree);

std::int64_t count_parameters(const ParamTree& tree);

} // namespace moca
