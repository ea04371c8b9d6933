// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen-feature evaluation of a pre-trained teacher: embedding banks,
// k-NN, linear probe and low-shot logistic regression.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moca/numerics/params.hpp"
#include "moca/pipeline/dataset.hpp"
#include "moca/vit/vit.hpp"

namespace moca {

struct EmbeddingBank {
    std::int64_t count = 0;
    std::int64_t dim = 0;
    std::vector<float> raw;         // [count, dim] teacher [AVG] features
    std::vector<float> normalized;  // raw rows scaled to unit norm
    std::vector<std::int32_t> labels;

    std::span<const float> row(std::int64_t i) const;
    std::int32_t num_classes() const;
};

// Builds `normalized` from `raw`.
EmbeddingBank make_bank(std::vector<float> raw, std::int64_t dim, std::vector<std::int32_t> labels);

// One [AVG] embedding per image from full, centre-cropped views through the
// given teacher encoder. No tape is recorded.
EmbeddingBank extract_embeddings(const ParamTree& teacher, const ViTConfig& cfg, const ImageDataset& ds,
                                 std::int64_t batch_size = 250);

// "MIMF": u32 count, u32 1, u32 1, u32 dim, f32 raw features, u8 labels.
void write_bank(const EmbeddingBank& bank, const std::filesystem::path& file);
EmbeddingBank read_bank(const std::filesystem::path& file);

struct KnnOptions {
    std::int64_t k = 20;
    double temperature = 0.07;
    bool weighted = true;  // false: one vote per neighbour
};

struct ClassifierResult {
    std::vector<std::int32_t> predictions;
    double accuracy = 0.0;  // percent
};

// Cosine k-NN in f64. Neighbours are ranked by (similarity desc, bank index
// asc); each casts exp(sim / temperature) (or 1) for its label, and class ties
// go to the lowest class id. Throws ContractViolation on an empty bank or
// k > bank size.
ClassifierResult knn_classify(const EmbeddingBank& bank, const EmbeddingBank& queries, const KnnOptions& opts = {});

struct LinearProbeOptions {
    std::int64_t epochs = 50;
    double lr = 0.04;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::int64_t batch_size = 256;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
};

// Softmax layer on standardized raw features (per-dimension train mean and
// std), momentum SGD with per-step cosine decay, no augmentation.
ProbeResult linear_probe(const EmbeddingBank& train, const EmbeddingBank& val, const LinearProbeOptions& opts = {});

// Multinomial logistic regression W x + b with penalty l2/2 ||W||^2 on the
// mean cross-entropy.
struct LogReg {
    std::int64_t classes = 0;
    std::int64_t dim = 0;
    std::vector<double> w;  // [classes, dim]
    std::vector<double> b;  // [classes]
    std::int64_t iterations = 0;
    double grad_norm = 0.0;

    std::int32_t predict(std::span<const double> x) const;
};

// Full-batch gradient descent with step 1/L for the objective's smoothness
// bound L; stops once the gradient norm drops below `tol` or after
// `max_iters` iterations. x holds n rows of `dim` values.
LogReg fit_logreg(std::span<const double> x, std::span<const std::int32_t> y, std::int64_t dim,
                  std::int64_t classes, double l2, std::int64_t max_iters = 10000, double tol = 1e-6);

struct LowShotOptions {
    std::int64_t shots = 1;
    std::int64_t splits = 3;
    std::vector<double> l2_grid = {1e-4, 1e-3, 1e-2};
    // Held-out train items per class used to pick l2 on split 1.
    std::int64_t validation_per_class = 20;
    std::int64_t max_iters = 10000;
    double tol = 1e-6;
    std::uint64_t seed = 0;
};

struct LowShotResult {
    std::vector<double> accuracies;  // percent, one per split
    double mean = 0.0;
    double std = 0.0;                // population std over splits
    double l2 = 0.0;                 // selected strength
};

// Per split, draws `shots` train items per class, fits on their normalized
// features and scores `test`. Throws SamplingError when a class has too few
// items.
LowShotResult lowshot_logreg(const EmbeddingBank& train, const EmbeddingBank& test, const LowShotOptions& opts);

struct ResultRow {
    std::string protocol;
    std::string config;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

// Appends rows to a `protocol,config,seed,accuracy` CSV, writing the header
// when the file is new.
void append_results(const std::filesystem::path& file, std::span<const ResultRow> rows);

} // namespace moca
