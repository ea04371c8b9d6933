// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "moca/codebook/codebook.hpp"
#include "moca/numerics/ops.hpp"
#include "oracles/oracles.hpp"

using namespace moca;

namespace {

// Unit vectors in the plane whose angle encodes an integer id.
constexpr double kAngleStep = 1e-3;

std::vector<double> id_vector(int id) {
    return {std::cos(id * kAngleStep), std::sin(id * kAngleStep)};
}

int decode_id(double c, double s) { return static_cast<int>(std::lround(std::atan2(s, c) / kAngleStep)); }

std::deque<int> ring_ids(const Codebook& cb) {
    std::deque<int> ids;
    for (std::int64_t i = 0; i < cb.size(); ++i) {
        const std::int64_t row = (cb.write_ptr + i) % cb.size();
        ids.push_back(decode_id(cb.entries.at(row * 2), cb.entries.at(row * 2 + 1)));
    }
    return ids;
}

std::vector<std::int64_t> iota_ids(std::int64_t n, std::int64_t offset = 0) {
    std::vector<std::int64_t> v(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        v[static_cast<std::size_t>(i)] = offset + i;
    }
    return v;
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    for (const auto& r : rows) {
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::from_vector({static_cast<std::int64_t>(rows.size()), static_cast<std::int64_t>(rows[0].size())},
                               flat);
}

} // namespace

TEST_CASE("assign examples") {
    SUBCASE("identical entries give a uniform assignment") {
        const Codebook cb = Codebook::from_rows(Tensor::full({5, 3}, 0.7, DType::f64), 1);
        const Tensor tokens = Tensor::from_vector({2, 3}, std::vector<double>{1, -2, 0.5, 0, 0, 3});
        const Assignment a = assign(tokens, cb, TemperatureState{});
        for (int i = 0; i < 10; ++i) {
            CHECK(a.q.at(i) == doctest::Approx(0.2).epsilon(1e-12));
        }
    }
    SUBCASE("token equal to entry 1 with orthogonal others at tau 1/3") {
        const Codebook cb = Codebook::from_rows(Tensor::from_vector({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}), 1);
        TemperatureState ts;
        ts.msd_ema = 0.3;
        CHECK(ts.tau() == doctest::Approx(1.0 / 3.0));
        const Assignment a = assign(Tensor::from_vector({1, 3}, std::vector<double>{2, 0, 0}), cb, ts);
        const auto ref = oracle::softmax_ce_oracle({1, 0, 0}, {1, 0, 0}, 1.0 / 3.0);
        for (int k = 0; k < 3; ++k) {
            CHECK(std::abs(a.q.at(k) - ref.probs[static_cast<std::size_t>(k)]) <= 1e-6);
        }
        CHECK(std::abs(a.q.at(0) - 0.9094) <= 1e-4);
        CHECK(std::abs(a.q.at(1) - 0.0453) <= 1e-4);
    }
}

TEST_CASE("assign output is stop-gradient") {
    std::mt19937_64 rng(1);
    Tensor tokens = Tensor::from_vector({4, 6}, oracle::random_vector(rng, 24));
    tokens.set_requires_grad(true);
    Codebook cb = Codebook::random(5, 6, 1, 3, DType::f64);
    cb.entries.set_requires_grad(true);
    Tape tape;
    const Assignment a = assign(tokens, cb, TemperatureState{});
    CHECK_FALSE(a.q.requires_grad());
    CHECK_FALSE(a.sims.requires_grad());
    CHECK(tape.size() == 0);
}

TEST_CASE("assignment properties on random inputs") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t k = 2 + static_cast<std::int64_t>(rng() % 30);
        const std::int64_t d = 1 + static_cast<std::int64_t>(rng() % 12);
        const Codebook cb = Codebook::random(k, d, 1, rng(), trial % 2 ? DType::f64 : DType::f32);
        const Tensor tokens = Tensor::from_vector({6, d}, oracle::random_vector(rng, static_cast<std::size_t>(6 * d), 5.0));
        TemperatureState ts;
        ts.msd_ema = 0.01 + 0.1 * (trial % 9);
        const Assignment a = assign(tokens, cb, ts);
        for (int r = 0; r < 6; ++r) {
            double s = 0.0;
            for (std::int64_t j = 0; j < k; ++j) {
                s += a.q.at(r * k + j);
            }
            CHECK(std::abs(s - 1.0) <= 1e-5);
        }
        // Positive rescaling of the tokens leaves q unchanged.
        const Assignment scaled = assign(scale(tokens, 37.5), cb, ts);
        for (std::int64_t i = 0; i < a.q.numel(); ++i) {
            CHECK(std::abs(a.q.at(i) - scaled.q.at(i)) <= 1e-6);
        }
        // The argmax does not depend on the temperature.
        TemperatureState hot;
        hot.msd_ema = 0.0011;
        const Assignment b = assign(tokens, cb, hot);
        for (int r = 0; r < 6; ++r) {
            std::int64_t am = 0;
            std::int64_t bm = 0;
            for (std::int64_t j = 1; j < k; ++j) {
                if (a.q.at(r * k + j) > a.q.at(r * k + am)) {
                    am = j;
                }
                if (b.q.at(r * k + j) > b.q.at(r * k + bm)) {
                    bm = j;
                }
            }
            CHECK(am == bm);
        }
    }
}

TEST_CASE("update_temperature examples") {
    TemperatureState ts;
    ts.msd_ema = 0.8;
    CHECK(ts.tau() == doctest::Approx(0.125).epsilon(1e-15));

    ts.msd_ema = 0.5;
    update_temperature(ts, 0.7);
    CHECK(ts.msd_ema == doctest::Approx(0.502).epsilon(1e-15));

    SUBCASE("equal similarities give zero difference and the floor engages") {
        TemperatureState flat;
        flat.msd_ema = 0.0;
        const Tensor sims = Tensor::full({8, 5}, 0.3, DType::f64);
        CHECK(mean_similarity_difference(sims, 2) == 0.0);
        const double tau = update_temperature(flat, sims, 2);
        CHECK(flat.msd_ema == 0.0);
        CHECK(tau == doctest::Approx(1.0 / (10.0 * 1e-3)));
    }
    SUBCASE("per-image averaging") {
        // Image 0: tokens with differences 1.0 and 0.0; image 1: one token with 0.5, one with 0.5.
        const Tensor sims = Tensor::from_vector(
            {4, 2}, std::vector<double>{1.0, -1.0, 0.2, 0.2, 0.5, -0.5, 0.75, -0.25});
        CHECK(mean_similarity_difference(sims, 2) == doctest::Approx((0.5 + 0.5) / 2.0));
    }
    SUBCASE("tau stays positive") {
        TemperatureState s;
        for (int i = 0; i < 2000; ++i) {
            update_temperature(s, 0.0);
            CHECK(s.tau() > 0.0);
        }
        CHECK(s.tau() == doctest::Approx(100.0));
    }
}

TEST_CASE("enqueue examples") {
    SUBCASE("K=8, K_new=2: step 5 overwrites the step-1 entries") {
        Codebook cb = Codebook::random(8, 4, 2, 1, DType::f64);
        std::mt19937_64 g(3);
        for (std::int64_t step = 1; step <= 5; ++step) {
            const Tensor v = Tensor::from_vector({3 * 2, 4}, oracle::random_vector(g, 24));
            const std::vector<Tensor> views{v};
            Rng rng(9, Stream::codebook, static_cast<std::uint64_t>(step));
            const auto ids = iota_ids(3);
            const auto written = enqueue(cb, views, 3, ids, step, rng);
            CHECK(written.size() == 2);
            if (step == 4) {
                std::vector<std::int64_t> ages = cb.ages;
                std::sort(ages.begin(), ages.end());
                CHECK(ages == std::vector<std::int64_t>{1, 1, 2, 2, 3, 3, 4, 4});
            }
        }
        CHECK(cb.ages[0] == 5);
        CHECK(cb.ages[1] == 5);
        CHECK(cb.ages[2] == 2);
    }
    SUBCASE("K=4096, K_new=4 turns over fully every 1024 steps") {
        Codebook cb = Codebook::random(4096, 4, 4, 1);
        std::mt19937_64 g(4);
        const Tensor v = Tensor::from_vector({4 * 3, 4}, oracle::random_vector(g, 48)).to(DType::f32);
        const std::vector<Tensor> views{v, v};
        const auto ids = iota_ids(4);
        for (std::int64_t step = 1; step <= 1024; ++step) {
            Rng rng(1, Stream::codebook, static_cast<std::uint64_t>(step));
            enqueue(cb, views, 4, ids, step, rng);
        }
        CHECK(*std::min_element(cb.ages.begin(), cb.ages.end()) == 1);
        CHECK(cb.write_ptr == 0);
        Rng rng(1, Stream::codebook, 1025);
        enqueue(cb, views, 4, ids, 1025, rng);
        CHECK(std::count(cb.ages.begin(), cb.ages.end(), 1) == 0);
    }
    SUBCASE("K_new=0 freezes the codebook") {
        Codebook cb = Codebook::random(6, 3, 0, 1);
        const Tensor before = cb.entries.clone();
        const std::vector<Tensor> views{Tensor::full({4, 3}, 1.0)};
        Rng rng(1, Stream::codebook);
        const auto ids = iota_ids(2);
        CHECK(enqueue(cb, views, 2, ids, 1, rng).empty());
        CHECK(cb.entries.bitwise_equal(before));
    }
    SUBCASE("too few distinct images is a configuration error") {
        Codebook cb = Codebook::random(6, 3, 3, 1);
        const std::vector<Tensor> views{Tensor::full({4 * 2, 3}, 1.0)};
        Rng rng(1, Stream::codebook);
        const std::vector<std::int64_t> ids{7, 7, 8, 8};
        CHECK_THROWS_AS(enqueue(cb, views, 4, ids, 1, rng), ConfigError);
    }
}

TEST_CASE("enqueued tokens are unit-norm and come from distinct images") {
    std::mt19937_64 g(5);
    Codebook cb = Codebook::random(16, 5, 4, 2);
    for (std::int64_t step = 1; step <= 40; ++step) {
        const Tensor v1 = Tensor::from_vector({6 * 3, 5}, oracle::random_vector(g, 90, 4.0)).to(DType::f32);
        const Tensor v2 = Tensor::from_vector({6 * 3, 5}, oracle::random_vector(g, 90, 0.1)).to(DType::f32);
        const std::vector<Tensor> views{v1, v2};
        const auto ids = iota_ids(6, step * 100);
        Rng rng(2, Stream::codebook, static_cast<std::uint64_t>(step));
        const auto written = enqueue(cb, views, 6, ids, step, rng);
        std::vector<std::int64_t> images;
        for (const auto& e : written) {
            images.push_back(e.image);
            double norm = 0.0;
            for (int j = 0; j < 5; ++j) {
                norm += cb.entries.at(e.slot * 5 + j) * cb.entries.at(e.slot * 5 + j);
            }
            CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-6);
        }
        std::sort(images.begin(), images.end());
        CHECK(std::adjacent_find(images.begin(), images.end()) == images.end());
        if (step >= 4) {
            const auto [lo, hi] = std::minmax_element(cb.ages.begin(), cb.ages.end());
            CHECK(*hi - *lo <= 16 / 4);
        }
    }
}

TEST_CASE("codebook ring matches a plain list simulation") {
    std::mt19937_64 g(2026);
    int compared = 0;
    for (int seq = 0; seq < 1000; ++seq) {
        const std::int64_t k = 1 + static_cast<std::int64_t>(g() % 12);
        const std::int64_t k_new = static_cast<std::int64_t>(g() % static_cast<std::uint64_t>(k + 1));
        const std::int64_t batch = std::max<std::int64_t>(k_new, 1) + static_cast<std::int64_t>(g() % 3);
        const std::int64_t views_n = 1 + static_cast<std::int64_t>(g() % 2);
        const std::int64_t patches = 1 + static_cast<std::int64_t>(g() % 3);
        const std::int64_t steps = 1 + static_cast<std::int64_t>(g() % 12);

        std::vector<std::vector<double>> init;
        std::deque<int> initial;
        for (int i = 0; i < k; ++i) {
            init.push_back(id_vector(i));
            initial.push_back(i);
        }
        Codebook cb = Codebook::from_rows(rows_tensor(init), k_new);
        std::vector<oracle::QueueOp> ops;
        int next_id = static_cast<int>(k);
        for (std::int64_t step = 1; step <= steps; ++step) {
            // Token (view, image, patch) carries id base + its flat position.
            const int base = next_id;
            std::vector<Tensor> views;
            for (std::int64_t v = 0; v < views_n; ++v) {
                std::vector<std::vector<double>> rows;
                for (std::int64_t t = 0; t < batch * patches; ++t) {
                    rows.push_back(id_vector(base + static_cast<int>(v * batch * patches + t)));
                }
                views.push_back(rows_tensor(rows));
            }
            next_id += static_cast<int>(views_n * batch * patches);
            Rng rng(static_cast<std::uint64_t>(seq), Stream::codebook, static_cast<std::uint64_t>(step));
            const auto ids = iota_ids(batch);
            const auto written = enqueue(cb, views, batch, ids, step, rng);
            oracle::QueueOp op;
            for (const auto& e : written) {
                op.inserted.push_back(base + static_cast<int>(e.view * batch * patches + e.image * patches + e.patch));
            }
            ops.push_back(op);
        }
        const auto expected = oracle::queue_oracle(initial, static_cast<std::size_t>(k), ops);
        CHECK(ring_ids(cb) == expected);
        ++compared;
    }
    CHECK(compared == 1000);
}

TEST_CASE("reduce_bow examples") {
    SUBCASE("constant one-hot assignment pools to itself") {
        std::vector<double> q;
        for (int t = 0; t < 2 * 16; ++t) {
            q.insert(q.end(), {0, 0, 1, 0});
        }
        const Tensor y = reduce_bow(Tensor::from_vector({32, 4}, q), 2, 4, 4, 1);
        CHECK(y.shape() == Shape{2, 4});
        CHECK(y.at(2) == 1.0);
        CHECK(y.at(6) == 1.0);
        CHECK(y.at(0) == 0.0);
    }
    SUBCASE("two interior tokens average to [0.5, 0.5]") {
        const Tensor y = reduce_bow(Tensor::from_vector({2, 2}, std::vector<double>{1, 0, 0, 1}), 1, 1, 2, 0);
        CHECK(y.at(0) == 0.5);
        CHECK(y.at(1) == 0.5);
    }
    SUBCASE("14x14 grid with border 2 averages 100 interior tokens") {
        std::vector<double> q(196 * 196, 0.0);
        for (int t = 0; t < 196; ++t) {
            q[static_cast<std::size_t>(t * 196 + t)] = 1.0;
        }
        const Tensor y = reduce_bow(Tensor::from_vector({196, 196}, q), 1, 14, 14, 2);
        int nonzero = 0;
        for (int t = 0; t < 196; ++t) {
            const int r = t / 14;
            const int c = t % 14;
            const bool interior = r >= 2 && r < 12 && c >= 2 && c < 12;
            if (y.at(t) != 0.0) {
                ++nonzero;
                CHECK(interior);
                CHECK(y.at(t) == doctest::Approx(0.01));
            }
        }
        CHECK(nonzero == 100);
        CHECK(default_border(14, 14) == 2);
    }
    SUBCASE("tiny grids keep an interior under the default border") {
        CHECK(default_border(8, 8) == 2);
        CHECK(default_border(4, 4) == 1);
        CHECK(default_border(2, 2) == 0);
        CHECK(default_border(1, 5) == 0);
    }
    SUBCASE("an empty interior is a configuration error") {
        CHECK_THROWS_AS(reduce_bow(Tensor::full({16, 2}, 0.5, DType::f64), 1, 4, 4, 2), ConfigError);
        CHECK_THROWS_AS(reduce_bow(Tensor::full({16, 2}, 0.5, DType::f64), 1, 4, 4, -1), ConfigError);
    }
    SUBCASE("pooled rows sum to one") {
        std::mt19937_64 g(8);
        const Tensor q = softmax_t(Tensor::from_vector({3 * 36, 7}, oracle::random_vector(g, 3 * 36 * 7, 3.0)), 0.2);
        const Tensor y = reduce_bow(q, 3, 6, 6, default_border(6, 6));
        for (int b = 0; b < 3; ++b) {
            double s = 0.0;
            for (int k = 0; k < 7; ++k) {
                s += y.at(b * 7 + k);
            }
            CHECK(std::abs(s - 1.0) <= 1e-5);
        }
    }
}
