// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/pipeline/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "moca/errors.hpp"

namespace moca {

void AugmentConfig::validate() const {
    if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
        throw ConfigError("augmentation crop scale must satisfy 0 < min <= max <= 1");
    }
    if (!(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max)) {
        throw ConfigError("augmentation crop ratio must satisfy 0 < min <= max");
    }
    for (double p : {flip_prob, grayscale_prob}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("augmentation probabilities must lie in [0, 1]");
        }
    }
    if (!(brightness >= 0.0 && brightness < 1.0) || !(contrast >= 0.0 && contrast < 1.0)) {
        throw ConfigError("augmentation jitter strengths must lie in [0, 1)");
    }
}

Image image_from_bytes(std::span<const std::uint8_t> pixels, std::int64_t height, std::int64_t width,
                       std::int64_t channels) {
    Image img{height, width, channels, std::vector<float>(pixels.size())};
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        img.data[i] = static_cast<float>(pixels[i] / 255.0);
    }
    return img;
}

Image resized_crop(const Image& src, double top, double left, double h, double w, std::int64_t out) {
    Image dst{out, out, src.channels, std::vector<float>(static_cast<std::size_t>(out * out * src.channels))};
    const double sy = h / static_cast<double>(out);
    const double sx = w / static_cast<double>(out);
    const std::int64_t c = src.channels;
    for (std::int64_t y = 0; y < out; ++y) {
        // Pixel centres map onto the crop box.
        const double fy = std::clamp(top + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                     static_cast<double>(src.height - 1));
        const auto y0 = static_cast<std::int64_t>(fy);
        const std::int64_t y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t x = 0; x < out; ++x) {
            const double fx = std::clamp(left + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                         static_cast<double>(src.width - 1));
            const auto x0 = static_cast<std::int64_t>(fx);
            const std::int64_t x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::int64_t k = 0; k < c; ++k) {
                auto at = [&](std::int64_t yy, std::int64_t xx) {
                    return static_cast<double>(src.data[static_cast<std::size_t>((yy * src.width + xx) * c + k)]);
                };
                const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                dst.data[static_cast<std::size_t>((y * out + x) * c + k)] = static_cast<float>(v);
            }
        }
    }
    return dst;
}

Image center_crop(const Image& src, std::int64_t out) {
    if (src.height == out && src.width == out) {
        return src;
    }
    const std::int64_t side = std::min(src.height, src.width);
    return resized_crop(src, static_cast<double>(src.height - side) / 2.0, static_cast<double>(src.width - side) / 2.0,
                        static_cast<double>(side), static_cast<double>(side), out);
}

Image augment_view(const Image& src, const AugmentConfig& cfg, std::int64_t out, Rng& rng) {
    if (!cfg.enabled) {
        return center_crop(src, out);
    }
    const double area = static_cast<double>(src.height * src.width);
    double h = static_cast<double>(src.height);
    double w = static_cast<double>(src.width);
    double top = 0.0;
    double left = 0.0;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double target = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
        const double log_ratio = rng.uniform(std::log(cfg.crop_ratio_min), std::log(cfg.crop_ratio_max));
        const double ratio = std::exp(log_ratio);
        const double cw = std::sqrt(target * ratio);
        const double ch = std::sqrt(target / ratio);
        if (cw <= static_cast<double>(src.width) && ch <= static_cast<double>(src.height)) {
            w = cw;
            h = ch;
            top = rng.uniform(0.0, static_cast<double>(src.height) - h);
            left = rng.uniform(0.0, static_cast<double>(src.width) - w);
            found = true;
        }
    }
    Image img = found ? resized_crop(src, top, left, h, w, out) : center_crop(src, out);

    const std::int64_t c = img.channels;
    const std::size_t pixels = static_cast<std::size_t>(img.height * img.width);
    if (rng.bernoulli(cfg.flip_prob)) {
        for (std::int64_t y = 0; y < img.height; ++y) {
            for (std::int64_t x = 0; x < img.width / 2; ++x) {
                for (std::int64_t k = 0; k < c; ++k) {
                    std::swap(img.data[static_cast<std::size_t>((y * img.width + x) * c + k)],
                              img.data[static_cast<std::size_t>((y * img.width + img.width - 1 - x) * c + k)]);
                }
            }
        }
    }
    const double bright = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
    for (auto& v : img.data) {
        v = static_cast<float>(std::clamp(v * bright, 0.0, 1.0));
    }
    const double contrast = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    double mean = 0.0;
    for (auto v : img.data) {
        mean += v;
    }
    mean /= static_cast<double>(img.data.size());
    for (auto& v : img.data) {
        v = static_cast<float>(std::clamp((v - mean) * contrast + mean, 0.0, 1.0));
    }
    if (c == 3 && rng.bernoulli(cfg.grayscale_prob)) {
        for (std::size_t p = 0; p < pixels; ++p) {
            float* px = img.data.data() + p * 3;
            const auto g = static_cast<float>(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
            px[0] = px[1] = px[2] = g;
        }
    }
    return img;
}

std::pair<Image, Image> augment_two_views(const Image& src, const AugmentConfig& cfg, std::int64_t out, Rng& rng1,
                                          Rng& rng2) {
    return {augment_view(src, cfg, out, rng1), augment_view(src, cfg, out, rng2)};
}

} // namespace moca
