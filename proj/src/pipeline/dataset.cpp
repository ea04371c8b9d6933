// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/pipeline/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "moca/errors.hpp"
#include "moca/numerics/rng.hpp"

namespace moca {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + file.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

void append(ImageDataset& into, const ImageDataset& from) {
    if (into.count == 0) {
        into = from;
        return;
    }
    if (from.height != into.height || from.width != into.width || from.channels != into.channels) {
        throw FormatError("dataset parts have different image sizes");
    }
    into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
    into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
    into.count += from.count;
}

} // namespace

std::span<const std::uint8_t> ImageDataset::image(std::int64_t i) const {
    return {pixels.data() + i * image_bytes(), static_cast<std::size_t>(image_bytes())};
}

std::int32_t ImageDataset::num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

void ImageDataset::validate() const {
    if (static_cast<std::int64_t>(labels.size()) != count ||
        static_cast<std::int64_t>(pixels.size()) != count * image_bytes()) {
        throw FormatError("dataset holds " + std::to_string(labels.size()) + " labels and " +
                          std::to_string(pixels.size()) + " pixel bytes for " + std::to_string(count) + " images");
    }
}

ImageDataset read_cifar10_file(const fs::path& file) {
    const auto bytes = read_bytes(file);
    const auto records = static_cast<std::int64_t>(bytes.size()) / kCifarRecordBytes;
    if (static_cast<std::int64_t>(bytes.size()) % kCifarRecordBytes != 0) {
        const std::int64_t offset = records * kCifarRecordBytes;
        throw FormatError(file.string() + ": truncated record " + std::to_string(records) + " at byte offset " +
                          std::to_string(offset) + " (" + std::to_string(static_cast<std::int64_t>(bytes.size()) - offset) +
                          " of " + std::to_string(kCifarRecordBytes) + " bytes)");
    }
    ImageDataset ds;
    ds.count = records;
    ds.height = 32;
    ds.width = 32;
    ds.channels = 3;
    ds.pixels.resize(static_cast<std::size_t>(records * 3072));
    ds.labels.resize(static_cast<std::size_t>(records));
    for (std::int64_t r = 0; r < records; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
        if (rec[0] > 9) {
            throw FormatError(file.string() + ": label " + std::to_string(rec[0]) + " at byte offset " +
                              std::to_string(r * kCifarRecordBytes) + " is not a CIFAR-10 class");
        }
        ds.labels[static_cast<std::size_t>(r)] = rec[0];
        std::uint8_t* dst = ds.pixels.data() + r * 3072;
        for (int p = 0; p < 1024; ++p) {
            for (int c = 0; c < 3; ++c) {
                dst[p * 3 + c] = rec[1 + c * 1024 + p];
            }
        }
    }
    return ds;
}

void write_cifar10_file(const ImageDataset& ds, const fs::path& file) {
    if (ds.height != 32 || ds.width != 32 || ds.channels != 3) {
        throw FormatError("CIFAR-10 records hold 32x32x3 images");
    }
    std::ofstream out(file, std::ios::binary);
    std::vector<char> rec(kCifarRecordBytes);
    for (std::int64_t i = 0; i < ds.count; ++i) {
        rec[0] = static_cast<char>(ds.labels[static_cast<std::size_t>(i)]);
        const auto img = ds.image(i);
        for (int p = 0; p < 1024; ++p) {
            for (int c = 0; c < 3; ++c) {
                rec[static_cast<std::size_t>(1 + c * 1024 + p)] = static_cast<char>(img[static_cast<std::size_t>(p * 3 + c)]);
            }
        }
        out.write(rec.data(), kCifarRecordBytes);
    }
    if (!out) {
        throw FormatError("failed writing " + file.string());
    }
}

ImageDataset ingest_cifar10(const fs::path& path, const std::string& split) {
    if (!fs::is_directory(path)) {
        return read_cifar10_file(path);
    }
    std::vector<fs::path> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) {
            const fs::path f = path / ("data_batch_" + std::to_string(i) + ".bin");
            if (fs::exists(f)) {
                files.push_back(f);
            }
        }
    } else if (split == "test") {
        if (fs::exists(path / "test_batch.bin")) {
            files.push_back(path / "test_batch.bin");
        }
    } else {
        throw ConfigError("unknown split '" + split + "' (expected train or test)");
    }
    if (files.empty()) {
        throw FormatError("no CIFAR-10 " + split + " batches under " + path.string());
    }
    ImageDataset ds;
    for (const auto& f : files) {
        append(ds, read_cifar10_file(f));
    }
    return ds;
}

ImageDataset read_mimg(const fs::path& file) {
    const auto bytes = read_bytes(file);
    if (bytes.size() < 20 || std::memcmp(bytes.data(), "MIMG", 4) != 0) {
        throw FormatError(file.string() + ": missing MIMG header");
    }
    ImageDataset ds;
    ds.count = read_u32(bytes, 4);
    ds.height = read_u32(bytes, 8);
    ds.width = read_u32(bytes, 12);
    ds.channels = read_u32(bytes, 16);
    const std::int64_t expected = 20 + ds.count * ds.image_bytes() + ds.count;
    if (static_cast<std::int64_t>(bytes.size()) != expected) {
        throw FormatError(file.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()) + " (payload ends at byte offset " +
                          std::to_string(std::min<std::int64_t>(expected, static_cast<std::int64_t>(bytes.size()))) + ")");
    }
    const auto px_end = bytes.begin() + 20 + ds.count * ds.image_bytes();
    ds.pixels.assign(bytes.begin() + 20, px_end);
    ds.labels.assign(px_end, bytes.end());
    return ds;
}

void write_mimg(const ImageDataset& ds, const fs::path& file) {
    ds.validate();
    std::ofstream out(file, std::ios::binary);
    out.write("MIMG", 4);
    put_u32(out, static_cast<std::uint32_t>(ds.count));
    put_u32(out, static_cast<std::uint32_t>(ds.height));
    put_u32(out, static_cast<std::uint32_t>(ds.width));
    put_u32(out, static_cast<std::uint32_t>(ds.channels));
    out.write(reinterpret_cast<const char*>(ds.pixels.data()), static_cast<std::streamsize>(ds.pixels.size()));
    for (std::int32_t l : ds.labels) {
        out.put(static_cast<char>(l));
    }
    if (!out) {
        throw FormatError("failed writing " + file.string());
    }
}

ImageDataset load_dataset(const fs::path& path, const std::string& split) {
    if (!fs::exists(path)) {
        throw FormatError("dataset path " + path.string() + " does not exist");
    }
    if (fs::is_regular_file(path)) {
        std::ifstream in(path, std::ios::binary);
        std::array<char, 4> magic{};
        in.read(magic.data(), 4);
        if (in && std::memcmp(magic.data(), "MIMG", 4) == 0) {
            return read_mimg(path);
        }
    } else if (fs::exists(path / (split + ".mimg"))) {
        return read_mimg(path / (split + ".mimg"));
    }
    return ingest_cifar10(path, split);
}

ImageDataset take_first(const ImageDataset& ds, std::int64_t n) {
    if (n <= 0 || n >= ds.count) {
        return ds;
    }
    ImageDataset out = ds;
    out.count = n;
    out.pixels.resize(static_cast<std::size_t>(n * ds.image_bytes()));
    out.labels.resize(static_cast<std::size_t>(n));
    return out;
}

Tensor to_tensor(const ImageDataset& ds, std::span<const std::int64_t> indices, DType dtype) {
    const auto b = static_cast<std::int64_t>(indices.size());
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(b * ds.image_bytes()));
    for (std::int64_t i : indices) {
        for (std::uint8_t px : ds.image(i)) {
            v.push_back(px / 255.0);
        }
    }
    return Tensor::from_f64({b, ds.height, ds.width, ds.channels}, v, dtype);
}

ImageDataset make_synthetic_dataset(std::int64_t count, std::int32_t classes, std::int64_t size, std::uint64_t seed) {
    ImageDataset ds;
    ds.count = count;
    ds.height = size;
    ds.width = size;
    ds.channels = 3;
    ds.pixels.resize(static_cast<std::size_t>(count * ds.image_bytes()));
    ds.labels.resize(static_cast<std::size_t>(count));
    // Per class: a few random low-frequency cosine components per channel.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<std::array<std::vector<Wave>, 3>> fields(static_cast<std::size_t>(classes));
    Rng crng(seed, Stream::init, 0, 99);
    for (auto& f : fields) {
        for (auto& ch : f) {
            for (int w = 0; w < 3; ++w) {
                ch.push_back({crng.uniform(0.5, 3.0), crng.uniform(0.5, 3.0), crng.uniform(0.0, 6.2831853),
                              crng.uniform(0.15, 0.35)});
            }
        }
    }
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng(seed, Stream::init, 1, static_cast<std::uint64_t>(i));
        const auto label = static_cast<std::int32_t>(i % classes);
        ds.labels[static_cast<std::size_t>(i)] = label;
        const double sx = rng.uniform(-0.15, 0.15);
        const double sy = rng.uniform(-0.15, 0.15);
        std::uint8_t* dst = ds.pixels.data() + i * ds.image_bytes();
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(size) + sx;
                const double v = static_cast<double>(y) / static_cast<double>(size) + sy;
                for (int c = 0; c < 3; ++c) {
                    double val = 0.5;
                    for (const auto& w : fields[static_cast<std::size_t>(label)][static_cast<std::size_t>(c)]) {
                        val += w.amp * std::cos(6.2831853 * (w.fx * u + w.fy * v) + w.phase);
                    }
                    val += 0.08 * rng.normal();
                    dst[(y * size + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
                }
            }
        }
    }
    return ds;
}

} // namespace moca
