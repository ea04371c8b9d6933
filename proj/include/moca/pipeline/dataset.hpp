// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moca/numerics/tensor.hpp"

namespace moca {

// Images kept as 8-bit HWC pixels; batches are converted to floats in [0, 1]
// on demand.
struct ImageDataset {
    std::int64_t count = 0;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;
    std::vector<std::uint8_t> pixels;  // count * height * width * channels
    std::vector<std::int32_t> labels;  // count

    std::int64_t image_bytes() const { return height * width * channels; }
    std::span<const std::uint8_t> image(std::int64_t i) const;
    std::int32_t num_classes() const;
    // Throws FormatError if sizes disagree.
    void validate() const;
};

inline constexpr std::int64_t kCifarRecordBytes = 3073;

// One CIFAR-10 binary batch: 3073-byte records of 1 label byte followed by
// 1024 R, 1024 G and 1024 B bytes.
ImageDataset read_cifar10_file(const std::filesystem::path& file);

// `path` may be a single batch file or a directory holding data_batch_1..5.bin
// (split "train") and test_batch.bin (split "test").
ImageDataset ingest_cifar10(const std::filesystem::path& path, const std::string& split = "train");

// Raw container: "MIMG", u32 count, u32 H, u32 W, u32 C, pixels, labels.
ImageDataset read_mimg(const std::filesystem::path& file);
void write_mimg(const ImageDataset& ds, const std::filesystem::path& file);
void write_cifar10_file(const ImageDataset& ds, const std::filesystem::path& file);

// Picks the loader by file signature (MIMG magic, else CIFAR records).
ImageDataset load_dataset(const std::filesystem::path& path, const std::string& split = "train");

// The first `n` images (all when n <= 0 or n >= count).
ImageDataset take_first(const ImageDataset& ds, std::int64_t n);

// Float batch [B, H, W, C] in [0, 1].
Tensor to_tensor(const ImageDataset& ds, std::span<const std::int64_t> indices, DType dtype = DType::f32);

// Class-structured images for tests and smoke runs: each class is a smooth
// random colour field, images are shifted noisy copies of their class field.
ImageDataset make_synthetic_dataset(std::int64_t count, std::int32_t classes, std::int64_t size, std::uint64_t seed);

} // namespace moca
