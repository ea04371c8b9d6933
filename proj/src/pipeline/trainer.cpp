// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/pipeline/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "moca/errors.hpp"
#include "moca/numerics/ops.hpp"
#include "moca/numerics/parallel.hpp"
#include "moca/prototypes/generator.hpp"

namespace moca {

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    augment.validate();
    const auto& o = optim;
    if (o.batch_size < 1 || o.epochs < 1) {
        throw ConfigError("batch size and epochs must be positive");
    }
    if (o.warmup_epochs < 0 || o.warmup_epochs > o.epochs) {
        throw ConfigError("warmup epochs must lie in [0, epochs], got " + std::to_string(o.warmup_epochs));
    }
    if (!(o.teacher_momentum >= 0.0 && o.teacher_momentum <= 1.0)) {
        throw ConfigError("teacher momentum must lie in [0, 1]");
    }
    if (!(o.base_lr >= 0.0) || !(o.weight_decay >= 0.0)) {
        throw ConfigError("learning rate and weight decay must be non-negative");
    }
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0)) {
        throw ConfigError("optimizer betas must lie in [0, 1)");
    }
    for (double r : {masking.ratio_round1, masking.ratio_round2}) {
        if (!(r > 0.0 && r < 1.0)) {
            throw ConfigError("mask percentages must lie strictly between 0 and 100");
        }
    }
    if (!(masking.dec_fraction >= 0.0 && masking.dec_fraction <= 1.0)) {
        throw ConfigError("percentage of predicted tokens must lie in [0, 100]");
    }
    if (masking.partial_decoding &&
        (masking.dec_fraction > masking.ratio_round1 ||
         (masking.second_round && masking.dec_fraction > masking.ratio_round2))) {
        throw ConfigError("percentage of predicted tokens exceeds a mask percentage");
    }
    if (codebook_size < 2) {
        throw ConfigError("codebook size must be at least 2");
    }
    if (new_words < 0 || new_words > codebook_size) {
        throw ConfigError("new words per step must lie in [0, codebook size]");
    }
    if (new_words > o.batch_size) {
        throw ConfigError("new words per step exceed the batch size");
    }
    if (border >= 0 && 2 * border >= model.grid()) {
        throw ConfigError("bag-of-words border leaves no interior tokens");
    }
    if (!(msd_init > 0.0) || !(msd_floor > 0.0) || !(msd_momentum >= 0.0 && msd_momentum <= 1.0)) {
        throw ConfigError("temperature settings out of range");
    }
    if (checkpoint_every_epochs < 0) {
        throw ConfigError("checkpoint interval must be non-negative");
    }
}

std::int64_t TrainConfig::resolved_border() const {
    return border >= 0 ? border : default_border(model.grid(), model.grid());
}

TrainState init_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState s;
    s.cfg = cfg;
    s.student = init_encoder(cfg.model, cfg.seed, cfg.dtype);
    s.student.merge(init_decoder(cfg.model, cfg.seed, cfg.dtype));
    add_generator(s.student, kGlobalGenerator, cfg.model.d_enc, cfg.model.d_enc, cfg.seed, cfg.dtype);
    add_generator(s.student, kTokenGenerator, cfg.model.d_enc, cfg.model.d_dec, cfg.seed, cfg.dtype);
    s.teacher = clone_tree(s.student, "encoder.");
    set_requires_grad(s.student, true);
    set_requires_grad(s.teacher, false);
    s.opt.beta1 = cfg.optim.beta1;
    s.opt.beta2 = cfg.optim.beta2;
    s.opt.weight_decay = cfg.optim.weight_decay;
    s.opt.init(s.student);
    s.cb = Codebook::random(cfg.codebook_size, cfg.model.d_enc, cfg.new_words, cfg.seed, cfg.dtype);
    s.ts.msd_ema = cfg.msd_init;
    s.ts.momentum = cfg.msd_momentum;
    s.ts.floor = cfg.msd_floor;
    return s;
}

std::int64_t steps_per_epoch(const TrainConfig& cfg, std::int64_t dataset_size) {
    const std::int64_t spe = dataset_size / cfg.optim.batch_size;
    if (spe < 1) {
        throw ConfigError("dataset of " + std::to_string(dataset_size) + " images is smaller than one batch of " +
                          std::to_string(cfg.optim.batch_size));
    }
    return spe;
}

LrSchedule lr_schedule(const TrainConfig& cfg, std::int64_t dataset_size) {
    const std::int64_t spe = steps_per_epoch(cfg, dataset_size);
    return LrSchedule{cfg.optim.base_lr, cfg.optim.warmup_epochs * spe, cfg.optim.epochs * spe};
}

std::vector<std::int64_t> batch_indices(const TrainConfig& cfg, std::int64_t dataset_size, std::int64_t step) {
    const std::int64_t spe = steps_per_epoch(cfg, dataset_size);
    const std::int64_t epoch = (step - 1) / spe;
    const std::int64_t pos = (step - 1) % spe;
    std::vector<std::int64_t> perm(static_cast<std::size_t>(dataset_size));
    std::iota(perm.begin(), perm.end(), std::int64_t{0});
    Rng rng(cfg.seed, Stream::shuffle, static_cast<std::uint64_t>(epoch));
    rng.shuffle(perm);
    const auto b = static_cast<std::size_t>(cfg.optim.batch_size);
    const auto first = perm.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(pos) * b);
    return {first, first + static_cast<std::ptrdiff_t>(b)};
}

std::array<Tensor, 2> make_views(const TrainConfig& cfg, const ImageDataset& ds, std::span<const std::int64_t> indices,
                                 std::int64_t step) {
    const std::int64_t s = cfg.model.image_size;
    const std::int64_t c = ds.channels;
    if (c != cfg.model.channels) {
        throw ConfigError("dataset has " + std::to_string(c) + " channels, model expects " +
                          std::to_string(cfg.model.channels));
    }
    const auto batch = static_cast<std::int64_t>(indices.size());
    std::array<std::vector<float>, 2> buf;
    for (auto& b : buf) {
        b.resize(static_cast<std::size_t>(batch * s * s * c));
    }
    const std::size_t per = static_cast<std::size_t>(s * s * c);
    parallel_for(batch, 1, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t b = lo; b < hi; ++b) {
            const Image src = image_from_bytes(ds.image(indices[static_cast<std::size_t>(b)]), ds.height, ds.width, c);
            for (std::int64_t v = 0; v < 2; ++v) {
                Rng rng(cfg.seed, Stream::augment, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(2 * b + v));
                const Image img = augment_view(src, cfg.augment, s, rng);
                std::copy(img.data.begin(), img.data.end(),
                          buf[static_cast<std::size_t>(v)].begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(b)));
            }
        }
    });
    std::array<Tensor, 2> views;
    for (std::size_t v = 0; v < 2; ++v) {
        Tensor t = Tensor::from_vector({batch, s, s, c}, std::move(buf[v]));
        views[v] = cfg.dtype == DType::f32 ? t : t.to(cfg.dtype);
    }
    return views;
}

namespace {

void write_dump(const std::filesystem::path& dir, std::int64_t step, const TrainState& state,
                const std::array<Tensor, 2>& views, const TeacherTargets& targets, const Tensor& w_b,
                const Tensor& w_d, const std::vector<RoundLosses>& rounds) {
    TensorFile f;
    for (const auto& [name, t] : state.student) {
        f.tensors.emplace_back("student/" + name, t.detach());
    }
    for (const auto& [name, t] : state.teacher) {
        f.tensors.emplace_back("teacher/" + name, t);
    }
    f.tensors.emplace_back("codebook.entries", state.cb.entries);
    for (std::size_t v = 0; v < 2; ++v) {
        const std::string tag = std::to_string(v + 1);
        f.tensors.emplace_back("view" + tag, views[v]);
        f.tensors.emplace_back("teacher.q" + tag, targets.q[v]);
        f.tensors.emplace_back("teacher.y" + tag, targets.y[v]);
    }
    f.tensors.emplace_back("w_b", w_b.detach());
    f.tensors.emplace_back("w_d", w_d.detach());
    for (std::size_t r = 0; r < rounds.size(); ++r) {
        const std::string tag = std::to_string(r + 1);
        f.tensors.emplace_back("round" + tag + ".img", rounds[r].img.detach());
        f.tensors.emplace_back("round" + tag + ".loc", rounds[r].loc.detach());
    }
    f.records.emplace_back("step", encode_i64(step));
    f.records.emplace_back("tau", encode_f64(targets.tau));
    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    write_tensor_file(f, dir / ("nonfinite_step_" + std::to_string(step) + ".moca"));
}

} // namespace

StepMetrics train_step(TrainState& state, const ImageDataset& ds, const StepOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& cfg = state.cfg;
    const std::int64_t step = state.step + 1;
    const std::int64_t spe = steps_per_epoch(cfg, ds.count);
    const std::int64_t batch = cfg.optim.batch_size;
    const std::int64_t n = cfg.model.num_patches();

    const std::vector<std::int64_t> idx = batch_indices(cfg, ds.count, step);
    const std::array<Tensor, 2> views = make_views(cfg, ds, idx, step);

    // (1)-(2) teacher targets at the temperature left by the previous step.
    const TeacherTargets targets =
        teacher_targets(state.teacher, cfg.model, views, state.cb, state.ts, cfg.resolved_border());
    // (3)
    const double msd = 0.5 * (mean_similarity_difference(targets.sims[0], batch) +
                              mean_similarity_difference(targets.sims[1], batch));
    update_temperature(state.ts, msd);

    std::vector<RoundLosses> rounds;
    Tensor w_b;
    Tensor w_d;
    Tensor total;
    {
        Tape tape;
        // (4)
        w_b = generate(state.student, kGlobalGenerator, state.cb);
        w_d = generate(state.student, kTokenGenerator, state.cb);
        // (5)
        const int round_total = cfg.masking.second_round ? 2 : 1;
        for (int r = 1; r <= round_total; ++r) {
            std::array<std::vector<MaskPlan>, 2> plans;
            for (std::int64_t v = 0; v < 2; ++v) {
                plans[static_cast<std::size_t>(v)] =
                    sample_plans(cfg.masking, r, v, batch, n, cfg.seed, step);
            }
            rounds.push_back(student_round(state.student, cfg.model, cfg.loss, views, plans, targets, w_b, w_d));
        }
        total = rounds.front().total;
        for (std::size_t r = 1; r < rounds.size(); ++r) {
            total = add(total, rounds[r].total);
        }
        if (rounds.size() > 1) {
            total = scale(total, 1.0 / static_cast<double>(rounds.size()));
        }
        if (!std::isfinite(total.item())) {
            write_dump(opts.dump_dir, step, state, views, targets, w_b, w_d, rounds);
            throw NumericalError("non-finite loss at step " + std::to_string(step) + "; tensors dumped to " +
                                 (opts.dump_dir / ("nonfinite_step_" + std::to_string(step) + ".moca")).string());
        }
        // (6)
        tape.backward(total);
    }

    // (7)
    const double lr = opts.lr_override ? *opts.lr_override : lr_schedule(cfg, ds.count).at(step);
    state.opt.step(state.student, lr);
    zero_grad(state.student);
    // (8)
    ema_update(state.teacher, state.student, cfg.optim.teacher_momentum);
    // (9)
    Rng cb_rng(cfg.seed, Stream::codebook, static_cast<std::uint64_t>(step));
    enqueue(state.cb, targets.tokens, batch, idx, step, cb_rng);

    state.step = step;

    StepMetrics m;
    m.step = step;
    m.epoch = (step - 1) / spe;
    m.lr = lr;
    m.loss_total = total.item();
    double img = 0.0;
    double loc = 0.0;
    for (const auto& r : rounds) {
        img += r.img.item();
        loc += r.loc.item();
    }
    m.loss_img = img / static_cast<double>(rounds.size());
    m.loss_loc = loc / static_cast<double>(rounds.size());
    m.tau = targets.tau;
    m.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

TensorFile state_to_file(const TrainState& state, const std::string& config_text) {
    TensorFile f;
    for (const auto& [name, t] : state.student) {
        f.tensors.emplace_back("student/" + name, t);
    }
    for (const auto& [name, t] : state.teacher) {
        f.tensors.emplace_back("teacher/" + name, t);
    }
    for (const auto& [name, t] : state.opt.m) {
        f.tensors.emplace_back("adam.m/" + name, t);
    }
    for (const auto& [name, t] : state.opt.v) {
        f.tensors.emplace_back("adam.v/" + name, t);
    }
    f.tensors.emplace_back("codebook/entries", state.cb.entries);
    f.records.emplace_back("config", config_text);
    f.records.emplace_back("step", encode_i64(state.step));
    f.records.emplace_back("optimizer.t", encode_i64(state.opt.t));
    f.records.emplace_back("codebook.write_ptr", encode_i64(state.cb.write_ptr));
    f.records.emplace_back("codebook.k_new", encode_i64(state.cb.k_new));
    f.records.emplace_back("codebook.ages", encode_i64_array(state.cb.ages));
    f.records.emplace_back("temperature.msd_ema", encode_f64(state.ts.msd_ema));
    // Every random stream is a pure function of (seed, stream, step, index),
    // so the seed and the step counter restore all of them.
    f.records.emplace_back("rng.seed", encode_u64(state.cfg.seed));
    return f;
}

void save_checkpoint(const TrainState& state, const std::string& config_text, const std::filesystem::path& path) {
    write_tensor_file(state_to_file(state, config_text), path);
}

namespace {

const std::string& require_record(const TensorFile& f, const std::string& name, const std::filesystem::path& path) {
    const std::string* r = f.find_record(name);
    if (r == nullptr) {
        throw FormatError(path.string() + ": missing record '" + name + "'");
    }
    return *r;
}

} // namespace

void load_checkpoint(TrainState& state, const std::filesystem::path& path) {
    const TensorFile f = read_tensor_file(path);
    restore_tree(f, "student/", state.student);
    restore_tree(f, "teacher/", state.teacher);
    restore_tree(f, "adam.m/", state.opt.m);
    restore_tree(f, "adam.v/", state.opt.v);
    ParamTree cb{{"entries", state.cb.entries}};
    restore_tree(f, "codebook/", cb);

    state.step = decode_i64(require_record(f, "step", path));
    state.opt.t = decode_i64(require_record(f, "optimizer.t", path));
    state.cb.write_ptr = decode_i64(require_record(f, "codebook.write_ptr", path));
    state.cb.k_new = decode_i64(require_record(f, "codebook.k_new", path));
    std::vector<std::int64_t> ages = decode_i64_array(require_record(f, "codebook.ages", path));
    if (static_cast<std::int64_t>(ages.size()) != state.cb.size()) {
        throw ConfigError("checkpoint codebook ages hold " + std::to_string(ages.size()) + " entries, config expects " +
                          std::to_string(state.cb.size()));
    }
    state.cb.ages = std::move(ages);
    state.ts.msd_ema = decode_f64(require_record(f, "temperature.msd_ema", path));
    const std::uint64_t seed = decode_u64(require_record(f, "rng.seed", path));
    if (seed != state.cfg.seed) {
        throw ConfigError("checkpoint was written with seed " + std::to_string(seed) + ", config has " +
                          std::to_string(state.cfg.seed));
    }
}

ParamTree load_teacher(const std::filesystem::path& path, const ViTConfig& cfg, DType dtype) {
    const TensorFile f = read_tensor_file(path);
    ParamTree teacher = init_encoder(cfg, 0, dtype);
    restore_tree(f, "teacher/", teacher);
    set_requires_grad(teacher, false);
    return teacher;
}

std::string checkpoint_config_text(const std::filesystem::path& path) {
    const TensorFile f = read_tensor_file(path);
    return require_record(f, "config", path);
}

std::string metrics_csv_header() { return "step,epoch,lr,loss_total,loss_img,loss_loc,tau_T,secs_per_step"; }

std::string metrics_csv_row(const StepMetrics& m) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f", static_cast<long long>(m.step),
                  static_cast<long long>(m.epoch), m.lr, m.loss_total, m.loss_img, m.loss_loc, m.tau, m.secs);
    return buf;
}

TrainState run_pretraining(const TrainConfig& cfg, const ImageDataset& full, const RunOptions& opts) {
    const ImageDataset ds = take_first(full, cfg.train_images);
    const int saved_threads = max_threads();
    if (cfg.deterministic) {
        set_max_threads(1);
    }
    TrainState state = init_state(cfg);
    if (opts.resume) {
        load_checkpoint(state, *opts.resume);
    }
    std::filesystem::create_directories(opts.out_dir);
    const std::filesystem::path csv_path = opts.out_dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(csv_path) || std::filesystem::file_size(csv_path) == 0;
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) {
        throw FormatError("cannot open " + csv_path.string() + " for appending");
    }
    if (fresh) {
        csv << metrics_csv_header() << '\n';
    }

    const std::int64_t spe = steps_per_epoch(cfg, ds.count);
    std::int64_t last = cfg.optim.epochs * spe;
    if (opts.max_steps > 0) {
        last = std::min(last, opts.max_steps);
    }
    StepOptions step_opts;
    step_opts.dump_dir = opts.out_dir;
    while (state.step < last) {
        const StepMetrics m = train_step(state, ds, step_opts);
        csv << metrics_csv_row(m) << '\n';
        csv.flush();
        if (opts.on_step) {
            opts.on_step(m);
        }
        if (cfg.checkpoint_every_epochs > 0 && state.step % spe == 0) {
            const std::int64_t epoch = state.step / spe;
            if (epoch % cfg.checkpoint_every_epochs == 0) {
                save_checkpoint(state, opts.config_text,
                                opts.out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".moca"));
            }
        }
    }
    save_checkpoint(state, opts.config_text, opts.out_dir / "checkpoint_final.moca");
    set_max_threads(saved_threads);
    return state;
}

} // namespace moca
