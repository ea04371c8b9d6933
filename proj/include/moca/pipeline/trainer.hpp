// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-training state, the single training step and the epoch loop with
// metrics and checkpoint output.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moca/codebook/codebook.hpp"
#include "moca/masking/masking.hpp"
#include "moca/numerics/params.hpp"
#include "moca/objectives/objectives.hpp"
#include "moca/pipeline/augment.hpp"
#include "moca/pipeline/checkpoint.hpp"
#include "moca/pipeline/dataset.hpp"
#include "moca/pipeline/optimizer.hpp"
#include "moca/vit/vit.hpp"

namespace moca {

struct OptimConfig {
    double teacher_momentum = 0.99;
    double base_lr = 5e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::int64_t batch_size = 128;
    std::int64_t warmup_epochs = 5;
    std::int64_t epochs = 50;
};

struct TrainConfig {
    ViTConfig model;
    LossConfig loss;
    MaskSettings masking;
    AugmentConfig augment;
    OptimConfig optim;
    std::int64_t codebook_size = 1024;
    std::int64_t new_words = 4;
    std::int64_t border = -1;  // -1: default_border of the patch grid
    double msd_init = 0.1;
    double msd_momentum = 0.99;
    double msd_floor = 1e-3;
    std::uint64_t seed = 0;
    bool deterministic = true;
    std::int64_t train_images = 10000;  // <= 0 keeps the whole split
    std::int64_t checkpoint_every_epochs = 10;
    DType dtype = DType::f32;

    // Throws ConfigError on inconsistent settings.
    void validate() const;
    std::int64_t resolved_border() const;
};

struct TrainState {
    TrainConfig cfg;
    ParamTree student;  // encoder., decoder., gen_b., gen_d.
    ParamTree teacher;  // encoder. only
    AdamW opt;
    Codebook cb;
    TemperatureState ts;
    std::int64_t step = 0;  // completed steps
};

// Fresh state: student from the init stream, teacher a copy of the student
// encoder, random unit-norm codebook.
TrainState init_state(const TrainConfig& cfg);

// floor(M / B); the last partial batch of each epoch is dropped.
std::int64_t steps_per_epoch(const TrainConfig& cfg, std::int64_t dataset_size);
LrSchedule lr_schedule(const TrainConfig& cfg, std::int64_t dataset_size);

// Dataset indices of the batch for 1-based `step` (per-epoch shuffle stream).
std::vector<std::int64_t> batch_indices(const TrainConfig& cfg, std::int64_t dataset_size, std::int64_t step);

// Two augmented views [B, S, S, C] of the given images for `step`. Image b,
// view v draws from (seed, augment, step, 2 b + v).
std::array<Tensor, 2> make_views(const TrainConfig& cfg, const ImageDataset& ds,
                                 std::span<const std::int64_t> indices, std::int64_t step);

struct StepMetrics {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_img = 0.0;
    double loss_loc = 0.0;
    double tau = 0.0;  // teacher temperature used for this step's targets
    double secs = 0.0;
};

// Where train_step writes its tensors when the loss is not finite. Empty: the
// current directory.
struct StepOptions {
    std::filesystem::path dump_dir;
    // Overrides the scheduled learning rate when set.
    std::optional<double> lr_override;
};

// One optimization step on the next batch. Throws NumericalError after
// writing a dump when the loss is not finite.
StepMetrics train_step(TrainState& state, const ImageDataset& ds, const StepOptions& opts = {});

// Full state as a checkpoint; `config_text` is stored verbatim.
TensorFile state_to_file(const TrainState& state, const std::string& config_text);
void save_checkpoint(const TrainState& state, const std::string& config_text, const std::filesystem::path& path);
// `state` supplies the expected names and shapes (normally init_state of the
// same config). Throws ConfigError with a shape diff on mismatch.
void load_checkpoint(TrainState& state, const std::filesystem::path& path);
// Teacher encoder only, for evaluation.
ParamTree load_teacher(const std::filesystem::path& path, const ViTConfig& cfg, DType dtype);
std::string checkpoint_config_text(const std::filesystem::path& path);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct RunOptions {
    std::filesystem::path out_dir;
    std::string config_text;
    // Stop after this many total steps (<= 0: run every epoch).
    std::int64_t max_steps = 0;
    std::optional<std::filesystem::path> resume;
    std::function<void(const StepMetrics&)> on_step;
};

// Trains to the end of the schedule (or max_steps). Appends to
// out_dir/metrics.csv, writes checkpoint_epoch<E>.moca every
// checkpoint_every_epochs epochs and checkpoint_final.moca at the end.
TrainState run_pretraining(const TrainConfig& cfg, const ImageDataset& ds, const RunOptions& opts);

} // namespace moca
