// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "moca/numerics/gradcheck.hpp"
#include "moca/numerics/ops.hpp"
#include "moca/vit/vit.hpp"
#include "oracles/oracles.hpp"

using namespace moca;

namespace {

ViTConfig micro_config() {
    ViTConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.channels = 1;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.d_enc = 8;
    cfg.d_dec = 8;
    cfg.dec_depth = 1;
    cfg.dec_heads = 2;
    cfg.tap_layer = 1;
    return cfg;
}

Tensor random_images(std::mt19937_64& rng, std::int64_t b, const ViTConfig& cfg, DType dt) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(b * cfg.image_size * cfg.image_size * cfg.channels));
    for (auto& x : v) {
        x = u(rng);
    }
    return Tensor::from_f64({b, cfg.image_size, cfg.image_size, cfg.channels}, v, dt);
}

ParamTree model(const ViTConfig& cfg, DType dt) {
    ParamTree p = init_encoder(cfg, 1, dt);
    p.merge(init_decoder(cfg, 1, dt));
    return p;
}

} // namespace

TEST_CASE("patchify grid arithmetic") {
    ViTConfig cfg;
    CHECK(cfg.num_patches() == 64);
    cfg.image_size = 224;
    cfg.patch_size = 16;
    CHECK(cfg.num_patches() == 196);
    std::mt19937_64 rng(1);
    cfg.channels = 3;
    const Tensor patches = extract_patches(random_images(rng, 1, cfg, DType::f32), cfg);
    CHECK(patches.shape() == Shape{196, 768});

    ViTConfig small;
    const ParamTree p = init_encoder(small, 3);
    const TokenSequence seq = patchify(random_images(rng, 2, small, DType::f32), p, small);
    CHECK(seq.tokens.shape() == Shape{2 * 65, 128});
    CHECK(seq.num_patches() == 64);
}

TEST_CASE("patchify rejects images of the wrong size") {
    ViTConfig cfg;
    const ParamTree p = init_encoder(cfg, 3);
    CHECK_THROWS_AS(patchify(Tensor::zeros({1, 28, 28, 3}), p, cfg), ConfigError);
}

TEST_CASE("patch pixels keep their layout") {
    ViTConfig cfg = micro_config();
    std::vector<double> px(16);
    for (int i = 0; i < 16; ++i) {
        px[static_cast<std::size_t>(i)] = i;
    }
    const Tensor patches = extract_patches(Tensor::from_vector({1, 4, 4, 1}, px), cfg);
    // Patch 1 is the top-right 2x2 block: pixels (0,2),(0,3),(1,2),(1,3).
    CHECK(patches.at(4) == 2.0);
    CHECK(patches.at(5) == 3.0);
    CHECK(patches.at(6) == 6.0);
    CHECK(patches.at(7) == 7.0);
}

TEST_CASE("identity projection of a constant image gives equal patch tokens") {
    ViTConfig cfg = micro_config();
    cfg.d_enc = 4;
    ParamTree p = init_encoder(cfg, 2, DType::f64);
    p["encoder.patch_embed.weight"] =
        Tensor::from_vector({4, 4}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    const TokenSequence seq = patchify(Tensor::full({1, 4, 4, 1}, 0.3, DType::f64), p, cfg);
    for (std::int64_t t = 2; t <= 4; ++t) {
        for (std::int64_t c = 0; c < 4; ++c) {
            CHECK(seq.tokens.at(t * 4 + c) == seq.tokens.at(4 + c));
        }
    }
    CHECK(seq.tokens.at(4) == doctest::Approx(0.3));
}

TEST_CASE("sincos_positions") {
    const Tensor a = sincos_positions(8, 8, 128);
    const Tensor b = sincos_positions(8, 8, 128);
    CHECK(a.bitwise_equal(b));
    CHECK(a.shape() == Shape{65, 128});
    SUBCASE("global row is zero and position (0,0) starts with sin(0)") {
        for (int c = 0; c < 128; ++c) {
            CHECK(a.at(c) == 0.0);
        }
        CHECK(a.at(128) == 0.0);
        CHECK(a.at(128 + 32) == 1.0);  // cos(0)
    }
    SUBCASE("each row depends on its own position only") {
        const Tensor wide = sincos_positions(3, 5, 16);
        const Tensor square = sincos_positions(5, 5, 16);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 5; ++c) {
                for (int k = 0; k < 16; ++k) {
                    CHECK(wide.at((1 + r * 5 + c) * 16 + k) == square.at((1 + r * 5 + c) * 16 + k));
                }
            }
        }
        // Distinct positions get distinct rows.
        for (int i = 1; i < 16; ++i) {
            for (int j = i + 1; j < 16; ++j) {
                double diff = 0.0;
                for (int k = 0; k < 16; ++k) {
                    diff += std::abs(square.at(i * 16 + k) - square.at(j * 16 + k));
                }
                CHECK(diff > 0.0);
            }
        }
    }
    SUBCASE("width must be divisible by 4") { CHECK_THROWS_AS(sincos_positions(2, 2, 6), ConfigError); }
}

TEST_CASE("config validation") {
    ViTConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.tap_layer = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.tap_layer = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ViTConfig{};
    cfg.image_size = 30;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(default_tap_layer(12) == 8);
    CHECK(default_tap_layer(6) == 4);
    CHECK(default_tap_layer(2) == 2);
}

TEST_CASE("encode outputs") {
    ViTConfig cfg;
    cfg.depth = 2;
    cfg.tap_layer = 1;
    const ParamTree p = init_encoder(cfg, 5, DType::f64);
    std::mt19937_64 rng(2);
    const TokenSequence seq = patchify(random_images(rng, 2, cfg, DType::f64), p, cfg);

    SUBCASE("teacher view keeps every patch and avg is the mean of final") {
        const auto u = all_visible(2, 64);
        const EncoderOutput out = encode(p, cfg, seq, u);
        CHECK(out.visible == 64);
        CHECK(out.final.shape() == Shape{128, 128});
        CHECK(out.tap.shape() == Shape{128, 128});
        CHECK(out.avg.shape() == Shape{2, 128});
        for (int b = 0; b < 2; ++b) {
            for (int c = 0; c < 128; c += 17) {
                double s = 0.0;
                for (int t = 0; t < 64; ++t) {
                    s += out.final.at((b * 64 + t) * 128 + c);
                }
                CHECK(out.avg.at(b * 128 + c) == doctest::Approx(s / 64.0).epsilon(1e-12));
            }
        }
    }
    SUBCASE("avg is invariant to the order of u") {
        std::vector<std::vector<std::int64_t>> u{{3, 9, 27, 50, 64}, {1, 2, 3, 4, 5}};
        const EncoderOutput a = encode(p, cfg, seq, u);
        for (auto& v : u) {
            std::reverse(v.begin(), v.end());
        }
        const EncoderOutput b = encode(p, cfg, seq, u);
        for (int i = 0; i < 256; ++i) {
            CHECK(a.avg.at(i) == doctest::Approx(b.avg.at(i)).epsilon(1e-12));
        }
    }
    SUBCASE("empty u is rejected") {
        const std::vector<std::vector<std::int64_t>> u{{}, {}};
        CHECK_THROWS_AS(encode(p, cfg, seq, u), ContractViolation);
    }
}

TEST_CASE("encode ignores the content of masked tokens") {
    ViTConfig cfg;
    cfg.depth = 2;
    cfg.tap_layer = 1;
    const ParamTree p = init_encoder(cfg, 5);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor images = random_images(rng, 2, cfg, DType::f32);
        std::vector<std::vector<std::int64_t>> u(2);
        std::mt19937_64 pick(static_cast<std::uint64_t>(trial));
        for (std::int64_t t = 1; t <= 64; ++t) {
            if (pick() % 3 == 0) {
                u[0].push_back(t);
                u[1].push_back(65 - t);
            }
        }
        std::sort(u[1].begin(), u[1].end());
        const EncoderOutput a = encode(p, cfg, patchify(images, p, cfg), u);

        // Scramble every pixel belonging to a masked patch.
        auto px = images.mutable_data<float>();
        for (std::int64_t b = 0; b < 2; ++b) {
            for (std::int64_t t = 1; t <= 64; ++t) {
                if (std::find(u[static_cast<std::size_t>(b)].begin(), u[static_cast<std::size_t>(b)].end(), t) !=
                    u[static_cast<std::size_t>(b)].end()) {
                    continue;
                }
                const std::int64_t gr = (t - 1) / 8;
                const std::int64_t gc = (t - 1) % 8;
                for (std::int64_t y = 0; y < 4; ++y) {
                    for (std::int64_t x = 0; x < 4; ++x) {
                        for (std::int64_t c = 0; c < 3; ++c) {
                            px[static_cast<std::size_t>(((b * 32 + gr * 4 + y) * 32 + gc * 4 + x) * 3 + c)] =
                                static_cast<float>(pick() % 1000) / 7.0f;
                        }
                    }
                }
            }
        }
        const EncoderOutput b = encode(p, cfg, patchify(images, p, cfg), u);
        CHECK(a.final.bitwise_equal(b.final));
        CHECK(a.tap.bitwise_equal(b.tap));
        CHECK(a.avg.bitwise_equal(b.avg));
        CHECK(a.cls.bitwise_equal(b.cls));
    }
}

TEST_CASE("decode") {
    ViTConfig cfg = micro_config();
    std::mt19937_64 rng(4);
    SUBCASE("zero-layer decoder is the identity") {
        cfg.dec_depth = 0;
        const ParamTree p = init_decoder(cfg, 1, DType::f64);
        const Tensor z = Tensor::from_vector({6, 8}, oracle::random_vector(rng, 48));
        CHECK(decode(p, cfg, z, 2).bitwise_equal(z));
    }
    SUBCASE("one output per input slot") {
        const ParamTree p = init_decoder(cfg, 1, DType::f64);
        const Tensor z = Tensor::from_vector({2 * 7, 8}, oracle::random_vector(rng, 14 * 8));
        CHECK(decode(p, cfg, z, 2).shape() == Shape{14, 8});
    }
    SUBCASE("width mismatch is a configuration error") {
        const ParamTree p = init_decoder(cfg, 1, DType::f64);
        CHECK_THROWS_AS(decode(p, cfg, Tensor::zeros({4, 6}, DType::f64), 2), ConfigError);
    }
    SUBCASE("slots of different images do not interact") {
        const ParamTree p = init_decoder(cfg, 1, DType::f64);
        Tensor z = Tensor::from_vector({2 * 3, 8}, oracle::random_vector(rng, 48));
        const Tensor before = decode(p, cfg, z, 2);
        z.mutable_data<double>()[40] += 1.0;  // a slot of image 1
        const Tensor after = decode(p, cfg, z, 2);
        for (int i = 0; i < 24; ++i) {
            CHECK(before.at(i) == after.at(i));
        }
    }
}

TEST_CASE("encode then decode passes finite differences on a micro model") {
    const ViTConfig cfg = micro_config();
    ParamTree p = model(cfg, DType::f64);
    std::mt19937_64 rng(6);
    const Tensor images = random_images(rng, 2, cfg, DType::f64);
    const std::vector<std::vector<std::int64_t>> u{{1, 3, 4}, {2, 3, 4}};
    const Tensor w_dec = Tensor::from_vector({8, 8}, oracle::random_vector(rng, 64));
    const Tensor w_avg = Tensor::from_vector({2, 8}, oracle::random_vector(rng, 16));
    const Tensor w_cls = Tensor::from_vector({2, 8}, oracle::random_vector(rng, 16));

    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    for (auto& [name, t] : p) {
        t.set_requires_grad(true);
        inputs.push_back(t);
        names.push_back(name);
    }
    auto f = [&] {
        const EncoderOutput out = encode(p, cfg, patchify(images, p, cfg), u);
        // Decoder sees the three tap rows and the avg row of each image.
        const Tensor tap = linear(p, "decoder.embed.", out.tap);
        const Tensor avg = linear(p, "decoder.embed.", out.avg);
        const std::vector<Tensor> parts{avg, tap};
        const Tensor slots = index_select(concat(parts, 0), std::vector<std::int64_t>{0, 2, 3, 4, 1, 5, 6, 7});
        const Tensor dec = decode(p, cfg, slots, 2);
        return add(add(sum(mul(dec, w_dec)), sum(mul(out.avg, w_avg))), sum(mul(out.cls, w_cls)));
    };
    const auto report = finite_difference_check(f, inputs, 1e-5, names);
    INFO("worst " << report.worst_input << "[" << report.worst_index << "]");
    CHECK(report.max_rel_error <= 1e-4);
    CHECK(report.entries_checked == count_parameters(p));
}
