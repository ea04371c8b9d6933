// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>

#include "moca/errors.hpp"
#include "moca/numerics/parallel.hpp"
#include "moca/numerics/rng.hpp"
#include "moca/pipeline/augment.hpp"

namespace moca {

std::span<const float> EmbeddingBank::row(std::int64_t i) const {
    return {raw.data() + i * dim, static_cast<std::size_t>(dim)};
}

std::int32_t EmbeddingBank::num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

EmbeddingBank make_bank(std::vector<float> raw, std::int64_t dim, std::vector<std::int32_t> labels) {
    if (dim < 1 || raw.size() != labels.size() * static_cast<std::size_t>(dim)) {
        throw ShapeError("embedding bank: " + std::to_string(raw.size()) + " values do not form " +
                         std::to_string(labels.size()) + " rows of " + std::to_string(dim));
    }
    EmbeddingBank bank;
    bank.count = static_cast<std::int64_t>(labels.size());
    bank.dim = dim;
    bank.raw = std::move(raw);
    bank.labels = std::move(labels);
    bank.normalized.resize(bank.raw.size());
    for (std::int64_t i = 0; i < bank.count; ++i) {
        double ss = 0.0;
        for (std::int64_t j = 0; j < dim; ++j) {
            const double v = bank.raw[static_cast<std::size_t>(i * dim + j)];
            ss += v * v;
        }
        const double inv = 1.0 / std::max(std::sqrt(ss), 1e-8);
        for (std::int64_t j = 0; j < dim; ++j) {
            const auto k = static_cast<std::size_t>(i * dim + j);
            bank.normalized[k] = static_cast<float>(bank.raw[k] * inv);
        }
    }
    return bank;
}

EmbeddingBank extract_embeddings(const ParamTree& teacher, const ViTConfig& cfg, const ImageDataset& ds,
                                 std::int64_t batch_size) {
    if (ds.channels != cfg.channels) {
        throw ConfigError("dataset has " + std::to_string(ds.channels) + " channels, model expects " +
                          std::to_string(cfg.channels));
    }
    NoTapeGuard no_tape;
    const DType dtype = param(teacher, "encoder.cls_token").dtype();
    const std::int64_t s = cfg.image_size;
    const std::int64_t c = cfg.channels;
    const std::size_t per = static_cast<std::size_t>(s * s * c);
    std::vector<float> raw;
    raw.reserve(static_cast<std::size_t>(ds.count * cfg.d_enc));
    for (std::int64_t lo = 0; lo < ds.count; lo += batch_size) {
        const std::int64_t b = std::min(batch_size, ds.count - lo);
        std::vector<float> pixels(per * static_cast<std::size_t>(b));
        for (std::int64_t i = 0; i < b; ++i) {
            const Image img = center_crop(image_from_bytes(ds.image(lo + i), ds.height, ds.width, c), s);
            std::copy(img.data.begin(), img.data.end(), pixels.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i)));
        }
        Tensor images = Tensor::from_vector({b, s, s, c}, std::move(pixels));
        if (dtype != DType::f32) {
            images = images.to(dtype);
        }
        const TokenSequence seq = patchify(images, teacher, cfg);
        const auto visible = all_visible(b, cfg.num_patches());
        const EncoderOutput out = encode(teacher, cfg, seq, visible);
        for (double v : out.avg.to_f64_vector()) {
            raw.push_back(static_cast<float>(v));
        }
    }
    return make_bank(std::move(raw), cfg.d_enc, ds.labels);
}

void write_bank(const EmbeddingBank& bank, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write("MIMF", 4);
    u32(static_cast<std::uint32_t>(bank.count));
    u32(1);
    u32(1);
    u32(static_cast<std::uint32_t>(bank.dim));
    out.write(reinterpret_cast<const char*>(bank.raw.data()), static_cast<std::streamsize>(bank.raw.size() * 4));
    for (std::int32_t l : bank.labels) {
        if (l < 0 || l > 255) {
            throw FormatError("bank label " + std::to_string(l) + " does not fit the u8 label field");
        }
        const auto u = static_cast<std::uint8_t>(l);
        out.write(reinterpret_cast<const char*>(&u), 1);
    }
    if (!out) {
        throw FormatError("failed writing " + file.string());
    }
}

EmbeddingBank read_bank(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + file.string());
    }
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 20 || bytes.compare(0, 4, "MIMF") != 0) {
        throw FormatError(file.string() + ": missing MIMF header");
    }
    std::uint32_t hdr[4];
    std::memcpy(hdr, bytes.data() + 4, 16);
    const std::uint64_t count = hdr[0];
    const std::uint64_t dim = static_cast<std::uint64_t>(hdr[1]) * hdr[2] * hdr[3];
    const std::uint64_t expected = 20 + count * dim * 4 + count;
    if (bytes.size() != expected) {
        throw FormatError(file.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()));
    }
    std::vector<float> raw(count * dim);
    std::memcpy(raw.data(), bytes.data() + 20, raw.size() * 4);
    std::vector<std::int32_t> labels(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        labels[i] = static_cast<std::uint8_t>(bytes[20 + count * dim * 4 + i]);
    }
    return make_bank(std::move(raw), static_cast<std::int64_t>(dim), std::move(labels));
}

namespace {

double accuracy_percent(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth) {
    if (truth.empty()) {
        return 0.0;
    }
    std::int64_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hit += pred[i] == truth[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.size());
}

} // namespace

ClassifierResult knn_classify(const EmbeddingBank& bank, const EmbeddingBank& queries, const KnnOptions& opts) {
    if (bank.count == 0) {
        throw ContractViolation("knn_classify: empty bank");
    }
    if (opts.k < 1 || opts.k > bank.count) {
        throw ContractViolation("knn_classify: k = " + std::to_string(opts.k) + " with a bank of " +
                                std::to_string(bank.count));
    }
    if (queries.count > 0 && queries.dim != bank.dim) {
        throw ShapeError("knn_classify: query dim " + std::to_string(queries.dim) + " vs bank dim " +
                         std::to_string(bank.dim));
    }
    const std::int64_t d = bank.dim;
    std::vector<double> bank_norm(static_cast<std::size_t>(bank.count));
    for (std::int64_t i = 0; i < bank.count; ++i) {
        double ss = 0.0;
        for (float v : bank.row(i)) {
            ss += static_cast<double>(v) * v;
        }
        bank_norm[static_cast<std::size_t>(i)] = std::max(std::sqrt(ss), 1e-8);
    }
    ClassifierResult res;
    res.predictions.resize(static_cast<std::size_t>(queries.count));
    parallel_for(queries.count, 8, [&](std::int64_t lo, std::int64_t hi) {
        std::vector<std::pair<double, std::int64_t>> sims(static_cast<std::size_t>(bank.count));
        for (std::int64_t q = lo; q < hi; ++q) {
            const auto qr = queries.row(q);
            double qss = 0.0;
            for (float v : qr) {
                qss += static_cast<double>(v) * v;
            }
            const double qn = std::max(std::sqrt(qss), 1e-8);
            for (std::int64_t i = 0; i < bank.count; ++i) {
                const auto br = bank.row(i);
                double dot = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    dot += static_cast<double>(qr[static_cast<std::size_t>(j)]) * br[static_cast<std::size_t>(j)];
                }
                sims[static_cast<std::size_t>(i)] = {dot / (qn * bank_norm[static_cast<std::size_t>(i)]), i};
            }
            std::partial_sort(sims.begin(), sims.begin() + opts.k, sims.end(), [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
            });
            std::map<std::int32_t, double> votes;
            for (std::int64_t j = 0; j < opts.k; ++j) {
                const auto& [sim, idx] = sims[static_cast<std::size_t>(j)];
                votes[bank.labels[static_cast<std::size_t>(idx)]] += opts.weighted ? std::exp(sim / opts.temperature) : 1.0;
            }
            std::int32_t best = -1;
            double best_vote = -1.0;
            for (const auto& [cls, v] : votes) {
                if (v > best_vote) {
                    best = cls;
                    best_vote = v;
                }
            }
            res.predictions[static_cast<std::size_t>(q)] = best;
        }
    });
    res.accuracy = accuracy_percent(res.predictions, queries.labels);
    return res;
}

namespace {

// Softmax of `logits` in place; returns log-sum-exp.
double softmax_inplace(std::span<double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double& v : logits) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : logits) {
        v /= s;
    }
    return mx + std::log(s);
}

std::int32_t argmax_row(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                        std::int64_t classes, std::int64_t dim) {
    std::int32_t best = 0;
    double best_v = 0.0;
    for (std::int64_t k = 0; k < classes; ++k) {
        double v = b[static_cast<std::size_t>(k)];
        for (std::int64_t j = 0; j < dim; ++j) {
            v += w[static_cast<std::size_t>(k * dim + j)] * x[static_cast<std::size_t>(j)];
        }
        if (k == 0 || v > best_v) {
            best = static_cast<std::int32_t>(k);
            best_v = v;
        }
    }
    return best;
}

} // namespace

ProbeResult linear_probe(const EmbeddingBank& train, const EmbeddingBank& val, const LinearProbeOptions& opts) {
    if (train.count == 0) {
        throw ContractViolation("linear_probe: empty training bank");
    }
    const std::int64_t d = train.dim;
    const std::int64_t classes = std::max(train.num_classes(), val.num_classes());
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < train.count; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            mean[static_cast<std::size_t>(j)] += train.row(i)[static_cast<std::size_t>(j)];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(train.count);
    }
    for (std::int64_t i = 0; i < train.count; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = train.row(i)[static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)];
            inv_std[static_cast<std::size_t>(j)] += c * c;
        }
    }
    for (double& s : inv_std) {
        const double sd = std::sqrt(s / static_cast<double>(train.count));
        s = sd > 1e-12 ? 1.0 / sd : 0.0;  // constant dimensions carry no signal
    }
    auto standardize = [&](const EmbeddingBank& bank) {
        std::vector<double> x(static_cast<std::size_t>(bank.count * d));
        for (std::int64_t i = 0; i < bank.count; ++i) {
            for (std::int64_t j = 0; j < d; ++j) {
                const auto jj = static_cast<std::size_t>(j);
                x[static_cast<std::size_t>(i * d + j)] = (bank.row(i)[jj] - mean[jj]) * inv_std[jj];
            }
        }
        return x;
    };
    const std::vector<double> xt = standardize(train);
    const std::vector<double> xv = standardize(val);

    std::vector<double> w(static_cast<std::size_t>(classes * d), 0.0);
    std::vector<double> b(static_cast<std::size_t>(classes), 0.0);
    std::vector<double> vw(w.size(), 0.0);
    std::vector<double> vb(b.size(), 0.0);
    std::vector<double> gw(w.size());
    std::vector<double> gb(b.size());
    std::vector<double> p(static_cast<std::size_t>(classes));
    const std::int64_t bs = std::min(opts.batch_size, train.count);
    const std::int64_t steps_per_epoch = (train.count + bs - 1) / bs;
    const std::int64_t total = opts.epochs * steps_per_epoch;
    std::vector<std::int64_t> order(static_cast<std::size_t>(train.count));
    std::int64_t t = 0;
    for (std::int64_t epoch = 0; epoch < opts.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::int64_t{0});
        Rng rng(opts.seed, Stream::eval, static_cast<std::uint64_t>(epoch));
        rng.shuffle(order);
        for (std::int64_t lo = 0; lo < train.count; lo += bs, ++t) {
            const std::int64_t hi = std::min(lo + bs, train.count);
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (std::int64_t r = lo; r < hi; ++r) {
                const std::int64_t i = order[static_cast<std::size_t>(r)];
                const double* x = xt.data() + i * d;
                for (std::int64_t k = 0; k < classes; ++k) {
                    double v = b[static_cast<std::size_t>(k)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        v += w[static_cast<std::size_t>(k * d + j)] * x[j];
                    }
                    p[static_cast<std::size_t>(k)] = v;
                }
                softmax_inplace(p);
                p[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)])] -= 1.0;
                for (std::int64_t k = 0; k < classes; ++k) {
                    const double g = p[static_cast<std::size_t>(k)];
                    gb[static_cast<std::size_t>(k)] += g;
                    for (std::int64_t j = 0; j < d; ++j) {
                        gw[static_cast<std::size_t>(k * d + j)] += g * x[j];
                    }
                }
            }
            const double inv_n = 1.0 / static_cast<double>(hi - lo);
            const double lr = 0.5 * opts.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                                                              static_cast<double>(total)));
            for (std::size_t q = 0; q < w.size(); ++q) {
                const double g = gw[q] * inv_n + opts.weight_decay * w[q];
                vw[q] = opts.momentum * vw[q] + g;
                w[q] -= lr * vw[q];
            }
            for (std::size_t q = 0; q < b.size(); ++q) {
                vb[q] = opts.momentum * vb[q] + gb[q] * inv_n;
                b[q] -= lr * vb[q];
            }
        }
    }
    auto score = [&](const std::vector<double>& x, const EmbeddingBank& bank) {
        std::vector<std::int32_t> pred(static_cast<std::size_t>(bank.count));
        for (std::int64_t i = 0; i < bank.count; ++i) {
            pred[static_cast<std::size_t>(i)] =
                argmax_row(w, b, {x.data() + i * d, static_cast<std::size_t>(d)}, classes, d);
        }
        return accuracy_percent(pred, bank.labels);
    };
    return ProbeResult{score(xt, train), score(xv, val)};
}

std::int32_t LogReg::predict(std::span<const double> x) const { return argmax_row(w, b, x, classes, dim); }

LogReg fit_logreg(std::span<const double> x, std::span<const std::int32_t> y, std::int64_t dim, std::int64_t classes,
                  double l2, std::int64_t max_iters, double tol) {
    const auto n = static_cast<std::int64_t>(y.size());
    if (n == 0 || static_cast<std::int64_t>(x.size()) != n * dim) {
        throw ShapeError("fit_logreg: " + std::to_string(x.size()) + " values for " + std::to_string(n) +
                         " rows of " + std::to_string(dim));
    }
    // The softmax Hessian is bounded by 1/2, so the mean loss is
    // (mean ||[x, 1]||^2 / 2)-smooth; the penalty adds l2.
    double sq = 0.0;
    for (double v : x) {
        sq += v * v;
    }
    const double lipschitz = 0.5 * (sq / static_cast<double>(n) + 1.0) + l2;
    const double step = 1.0 / lipschitz;

    LogReg m;
    m.classes = classes;
    m.dim = dim;
    m.w.assign(static_cast<std::size_t>(classes * dim), 0.0);
    m.b.assign(static_cast<std::size_t>(classes), 0.0);
    std::vector<double> gw(m.w.size());
    std::vector<double> gb(m.b.size());
    std::vector<double> p(static_cast<std::size_t>(classes));
    for (m.iterations = 0; m.iterations < max_iters; ++m.iterations) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
            const double* xi = x.data() + i * dim;
            for (std::int64_t k = 0; k < classes; ++k) {
                double v = m.b[static_cast<std::size_t>(k)];
                for (std::int64_t j = 0; j < dim; ++j) {
                    v += m.w[static_cast<std::size_t>(k * dim + j)] * xi[j];
                }
                p[static_cast<std::size_t>(k)] = v;
            }
            softmax_inplace(p);
            p[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])] -= 1.0;
            for (std::int64_t k = 0; k < classes; ++k) {
                const double g = p[static_cast<std::size_t>(k)];
                gb[static_cast<std::size_t>(k)] += g;
                for (std::int64_t j = 0; j < dim; ++j) {
                    gw[static_cast<std::size_t>(k * dim + j)] += g * xi[j];
                }
            }
        }
        double norm2 = 0.0;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t q = 0; q < gw.size(); ++q) {
            gw[q] = gw[q] * inv_n + l2 * m.w[q];
            norm2 += gw[q] * gw[q];
        }
        for (double& g : gb) {
            g *= inv_n;
            norm2 += g * g;
        }
        m.grad_norm = std::sqrt(norm2);
        if (m.grad_norm < tol) {
            break;
        }
        for (std::size_t q = 0; q < gw.size(); ++q) {
            m.w[q] -= step * gw[q];
        }
        for (std::size_t q = 0; q < gb.size(); ++q) {
            m.b[q] -= step * gb[q];
        }
    }
    return m;
}

namespace {

std::vector<double> normalized_rows(const EmbeddingBank& bank, std::span<const std::int64_t> idx) {
    std::vector<double> x;
    x.reserve(idx.size() * static_cast<std::size_t>(bank.dim));
    for (std::int64_t i : idx) {
        for (std::int64_t j = 0; j < bank.dim; ++j) {
            x.push_back(bank.normalized[static_cast<std::size_t>(i * bank.dim + j)]);
        }
    }
    return x;
}

std::vector<std::int32_t> labels_of(const EmbeddingBank& bank, std::span<const std::int64_t> idx) {
    std::vector<std::int32_t> y;
    for (std::int64_t i : idx) {
        y.push_back(bank.labels[static_cast<std::size_t>(i)]);
    }
    return y;
}

double score_logreg(const LogReg& m, const EmbeddingBank& bank, std::span<const std::int64_t> idx) {
    if (idx.empty()) {
        return 0.0;
    }
    const std::vector<double> x = normalized_rows(bank, idx);
    std::int64_t hit = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::span<const double> row{x.data() + i * static_cast<std::size_t>(bank.dim),
                                          static_cast<std::size_t>(bank.dim)};
        hit += m.predict(row) == bank.labels[static_cast<std::size_t>(idx[i])] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hit) / static_cast<double>(idx.size());
}

} // namespace

LowShotResult lowshot_logreg(const EmbeddingBank& train, const EmbeddingBank& test, const LowShotOptions& opts) {
    if (opts.shots < 1 || opts.splits < 1 || opts.l2_grid.empty()) {
        throw ConfigError("low-shot protocol needs shots >= 1, splits >= 1 and a non-empty l2 grid");
    }
    const std::int32_t classes = std::max(train.num_classes(), test.num_classes());
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(classes));
    for (std::int64_t i = 0; i < train.count; ++i) {
        by_class[static_cast<std::size_t>(train.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    for (std::int32_t c = 0; c < classes; ++c) {
        const auto have = static_cast<std::int64_t>(by_class[static_cast<std::size_t>(c)].size());
        if (have < opts.shots) {
            throw SamplingError("class " + std::to_string(c) + " has " + std::to_string(have) +
                                " training items, fewer than " + std::to_string(opts.shots) + " shots");
        }
    }
    std::vector<std::int64_t> test_idx(static_cast<std::size_t>(test.count));
    std::iota(test_idx.begin(), test_idx.end(), std::int64_t{0});

    LowShotResult res;
    for (std::int64_t split = 0; split < opts.splits; ++split) {
        std::vector<std::int64_t> picked;
        std::vector<std::int64_t> held_out;
        for (std::int32_t c = 0; c < classes; ++c) {
            const auto& pool = by_class[static_cast<std::size_t>(c)];
            Rng rng(opts.seed, Stream::eval, static_cast<std::uint64_t>(split + 1), static_cast<std::uint64_t>(c));
            const auto want = std::min<std::int64_t>(static_cast<std::int64_t>(pool.size()),
                                                     opts.shots + opts.validation_per_class);
            const auto order = rng.sample_without_replacement(static_cast<std::int64_t>(pool.size()), want);
            for (std::int64_t j = 0; j < want; ++j) {
                (j < opts.shots ? picked : held_out).push_back(pool[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])]);
            }
        }
        const std::vector<double> x = normalized_rows(train, picked);
        const std::vector<std::int32_t> y = labels_of(train, picked);
        if (split == 0) {
            double best = -1.0;
            for (double l2 : opts.l2_grid) {
                const LogReg m = fit_logreg(x, y, train.dim, classes, l2, opts.max_iters, opts.tol);
                const double acc = score_logreg(m, train, held_out);
                if (acc > best) {
                    best = acc;
                    res.l2 = l2;
                }
            }
        }
        const LogReg m = fit_logreg(x, y, train.dim, classes, res.l2, opts.max_iters, opts.tol);
        res.accuracies.push_back(score_logreg(m, test, test_idx));
    }
    res.mean = std::accumulate(res.accuracies.begin(), res.accuracies.end(), 0.0) /
               static_cast<double>(res.accuracies.size());
    double var = 0.0;
    for (double a : res.accuracies) {
        var += (a - res.mean) * (a - res.mean);
    }
    res.std = std::sqrt(var / static_cast<double>(res.accuracies.size()));
    return res;
}

void append_results(const std::filesystem::path& file, std::span<const ResultRow> rows) {
    const bool fresh = !std::filesystem::exists(file) || std::filesystem::file_size(file) == 0;
    std::ofstream out(file, std::ios::app);
    if (!out) {
        throw FormatError("cannot open " + file.string() + " for appending");
    }
    if (fresh) {
        out << "protocol,config,seed,accuracy\n";
    }
    for (const auto& r : rows) {
        char acc[64];
        std::snprintf(acc, sizeof acc, "%.4f", r.accuracy);
        out << r.protocol << ',' << r.config << ',' << r.seed << ',' << acc << '\n';
    }
}

} // namespace moca
