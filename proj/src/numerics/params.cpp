// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/params.hpp"

#include "moca/errors.hpp"

namespace moca {

const Tensor& param(const ParamTree& tree, const std::string& name) {
    auto it = tree.find(name);
    if (it == tree.end()) {
        throw ContractViolation("missing parameter '" + name + "'");
    }
    return it->second;
}

ParamTree clone_tree(const ParamTree& tree, std::string_view prefix) {
    ParamTree out;
    for (const auto& [name, t] : tree) {
        if (name.starts_with(prefix)) {
            out.emplace(name, t.clone());
        }
    }
    return out;
}

void check_isomorphic(const ParamTree& a, const ParamTree& b, std::string_view prefix) {
    std::size_t matched = 0;
    for (const auto& [name, t] : a) {
        if (!name.starts_with(prefix)) {
            continue;
        }
        auto it = b.find(name);
        if (it == b.end()) {
            throw ContractViolation("parameter trees differ: '" + name + "' missing");
        }
        if (it->second.shape() != t.shape() || it->second.dtype() != t.dtype()) {
            throw ContractViolation("parameter trees differ at '" + name + "': " + to_string(t.shape()) + " vs " +
                                    to_string(it->second.shape()));
        }
        ++matched;
    }
    if (matched != b.size()) {
        throw ContractViolation("parameter trees differ: " + std::to_string(b.size() - matched) + " extra entries");
    }
}

void set_requires_grad(ParamTree& tree, bool value) {
    for (auto& [name, t] : tree) {
        t.set_requires_grad(value);
    }
}

void zero_grad(ParamTree& tree) {
    for (auto& [name, t] : tree) {
        t.zero_grad();
    }
}

std::int64_t count_parameters(const ParamTree& tree) {
    std::int64_t n = 0;
    for (const auto& [name, t] : tree) {
        n += t.numel();
    }
    return n;
}

} // namespace moca
