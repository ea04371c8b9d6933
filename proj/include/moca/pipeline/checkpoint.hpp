// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary layout, little-endian:
//   "MOCA1"  u32 tensor_count
//   per tensor: u32 name_len, name, u8 dtype (0 = f32, 1 = f64), u32 ndim,
//               u64 dims[ndim], raw payload
//   per record: u32 name_len, name, u64 payload_len, payload
//   a final record named "end" with an empty payload.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "moca/numerics/params.hpp"

namespace moca {

inline constexpr char kCheckpointMagic[] = "MOCA1";

struct TensorFile {
    std::vector<std::pair<std::string, Tensor>> tensors;  // in file order
    std::vector<std::pair<std::string, std::string>> records;

    const Tensor* find_tensor(const std::string& name) const;
    const std::string* find_record(const std::string& name) const;
};

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path);
// Throws FormatError on a bad magic or truncated content.
TensorFile read_tensor_file(const std::filesystem::path& path);

// Record payload helpers.
std::string encode_i64(std::int64_t v);
std::string encode_u64(std::uint64_t v);
std::string encode_f64(double v);
std::string encode_i64_array(const std::vector<std::int64_t>& v);
std::int64_t decode_i64(const std::string& s);
std::uint64_t decode_u64(const std::string& s);
double decode_f64(const std::string& s);
std::vector<std::int64_t> decode_i64_array(const std::string& s);

// Copies tensors "<prefix><name>" from `file` into the matching entries of
// `into`, which fixes the expected names and shapes. Throws ConfigError
// listing every missing entry and every shape or dtype difference.
void restore_tree(const TensorFile& file, const std::string& prefix, ParamTree& into);

} // namespace moca
