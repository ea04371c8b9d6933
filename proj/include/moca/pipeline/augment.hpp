// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "moca/numerics/rng.hpp"

namespace moca {

struct AugmentConfig {
    bool enabled = true;
    double crop_scale_min = 0.3;
    double crop_scale_max = 1.0;
    double crop_ratio_min = 3.0 / 4.0;
    double crop_ratio_max = 4.0 / 3.0;
    double flip_prob = 0.5;
    double brightness = 0.4;
    double contrast = 0.4;
    double grayscale_prob = 0.2;

    void validate() const;
};

// HWC floats in [0, 1].
struct Image {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;
    std::vector<float> data;
};

Image image_from_bytes(std::span<const std::uint8_t> pixels, std::int64_t height, std::int64_t width,
                       std::int64_t channels);

// Bilinear resampling of the crop box (top, left, h, w) to out x out.
Image resized_crop(const Image& src, double top, double left, double h, double w, std::int64_t out);

// Largest centred square crop resized to out x out; identity when the image
// is already out x out.
Image center_crop(const Image& src, std::int64_t out);

// Random resized crop, horizontal flip, brightness/contrast jitter and random
// grayscale, in that order. Disabled configs return center_crop.
Image augment_view(const Image& src, const AugmentConfig& cfg, std::int64_t out, Rng& rng);

// Two independent views, each drawn from its own stream.
std::pair<Image, Image> augment_two_views(const Image& src, const AugmentConfig& cfg, std::int64_t out, Rng& rng1,
                                          Rng& rng2);

} // namespace moca
