// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/cli/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>

#include "moca/cli/config.hpp"
#include "moca/errors.hpp"
#include "moca/eval/eval.hpp"
#include "moca/pipeline/trainer.hpp"

namespace moca {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw ConfigError("cannot read config " + p.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::trunc);
    out << text;
    if (!out) {
        throw FormatError("failed writing " + p.string());
    }
}

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

RunConfig resolve(const CommonArgs& a, std::optional<std::string> base_text = std::nullopt,
                  const std::string& base_origin = "<checkpoint>") {
    RunConfig cfg;
    if (base_text) {
        cfg = parse_config(*base_text, base_origin);
    } else if (!a.config.empty()) {
        cfg = parse_config(read_text(a.config), a.config);
    }
    for (const auto& o : a.overrides) {
        apply_override(cfg, o);
    }
    if (a.seed) {
        cfg.train.seed = *a.seed;
    }
    cfg.train.validate();
    return cfg;
}

struct PretrainArgs {
    CommonArgs common;
    std::string data;
    std::string out;
    std::string resume;
    std::int64_t max_steps = 0;
    bool quiet = false;
};

void progress_line(std::ostream& out, const StepMetrics& m, std::int64_t total_steps) {
    out << "step " << m.step << "/" << total_steps << " epoch " << m.epoch << " loss " << fixed(m.loss_total, 4)
        << " img " << fixed(m.loss_img, 4) << " loc " << fixed(m.loss_loc, 4) << " tau " << fixed(m.tau, 3)
        << " lr " << m.lr << " " << fixed(m.secs, 3) << "s/step\n";
    out.flush();
}

TrainState pretrain(const RunConfig& cfg, const ImageDataset& ds, const fs::path& out_dir, std::int64_t max_steps,
                    const std::string& resume, bool quiet, std::ostream& out) {
    const std::string text = format_config(cfg);
    write_text(out_dir / "resolved_config.toml", text);
    RunOptions ro;
    ro.out_dir = out_dir;
    ro.config_text = text;
    ro.max_steps = max_steps;
    if (!resume.empty()) {
        ro.resume = resume;
    }
    const ImageDataset train = take_first(ds, cfg.train.train_images);
    const std::int64_t spe = steps_per_epoch(cfg.train, train.count);
    std::int64_t total = cfg.train.optim.epochs * spe;
    if (max_steps > 0) {
        total = std::min(total, max_steps);
    }
    if (!quiet) {
        ro.on_step = [&, spe, total](const StepMetrics& m) {
            if (m.step % spe == 0 || m.step == total || m.step == 1) {
                progress_line(out, m, total);
            }
        };
    }
    return run_pretraining(cfg.train, train, ro);
}

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
    const RunConfig cfg = resolve(a.common);
    const ImageDataset ds = load_dataset(a.data, "train");
    pretrain(cfg, ds, a.out, a.max_steps, a.resume, a.quiet, out);
    out << "wrote " << (fs::path(a.out) / "checkpoint_final.moca").string() << "\n";
    return kExitOk;
}

struct EvalArgs {
    CommonArgs common;
    std::string protocol;
    std::string ckpt;
    std::string data;
    std::string results;
    std::string export_bank;
    bool random_init = false;
    std::optional<std::int64_t> k;
    std::vector<std::int64_t> shots = {1, 2, 5};
    std::optional<std::int64_t> bank_images;
};

struct Banks {
    EmbeddingBank train;
    EmbeddingBank test;
};

Banks extract_banks(const ParamTree& teacher, const RunConfig& cfg, const std::string& data,
                    std::optional<std::int64_t> bank_images) {
    const ImageDataset train = take_first(load_dataset(data, "train"), bank_images.value_or(cfg.train.train_images));
    const ImageDataset test = load_dataset(data, "test");
    return {extract_embeddings(teacher, cfg.train.model, train), extract_embeddings(teacher, cfg.train.model, test)};
}

std::vector<ResultRow> run_protocol(const std::string& protocol, const Banks& banks, const RunConfig& cfg,
                                    const std::string& label, const std::vector<std::int64_t>& shots,
                                    std::ostream& out) {
    std::vector<ResultRow> rows;
    const std::uint64_t seed = cfg.train.seed;
    if (protocol == "knn") {
        const ClassifierResult r = knn_classify(banks.train, banks.test, cfg.knn);
        rows.push_back({"knn", label + ";k=" + std::to_string(cfg.knn.k), seed, r.accuracy});
        out << "knn k=" << cfg.knn.k << (cfg.knn.weighted ? " weighted" : " majority") << ": "
            << fixed(r.accuracy) << "%\n";
    } else if (protocol == "linear") {
        LinearProbeOptions o = cfg.probe;
        o.seed = seed;
        const ProbeResult r = linear_probe(banks.train, banks.test, o);
        rows.push_back({"linear", label + ";epochs=" + std::to_string(o.epochs), seed, r.val_accuracy});
        out << "linear probe: train " << fixed(r.train_accuracy) << "% val " << fixed(r.val_accuracy) << "%\n";
    } else {
        for (std::int64_t s : shots) {
            LowShotOptions o = cfg.lowshot;
            o.shots = s;
            o.seed = seed;
            const LowShotResult r = lowshot_logreg(banks.train, banks.test, o);
            const std::string p = "lowshot_" + std::to_string(s) + "shot";
            const std::string c = label + ";l2=" + fixed(r.l2, 6);
            for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
                rows.push_back({p + "_split" + std::to_string(i + 1), c, seed, r.accuracies[i]});
            }
            rows.push_back({p + "_mean", c, seed, r.mean});
            rows.push_back({p + "_std", c, seed, r.std});
            out << "lowshot " << s << "-shot: " << fixed(r.mean) << " +- " << fixed(r.std) << "% (l2 " << r.l2
                << ")\n";
        }
    }
    return rows;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    if (a.ckpt.empty() == !a.random_init) {
        throw ConfigError("eval needs exactly one of --ckpt or --random-init");
    }
    RunConfig cfg;
    ParamTree teacher;
    std::string label;
    if (!a.ckpt.empty()) {
        cfg = resolve(a.common, checkpoint_config_text(a.ckpt), a.ckpt);
        teacher = load_teacher(a.ckpt, cfg.train.model, cfg.train.dtype);
        label = "ckpt=" + fs::path(a.ckpt).filename().string();
    } else {
        cfg = resolve(a.common);
        teacher = init_encoder(cfg.train.model, cfg.train.seed, cfg.train.dtype);
        label = "random_init";
    }
    if (a.k) {
        cfg.knn.k = *a.k;
    }
    const Banks banks = extract_banks(teacher, cfg, a.data, a.bank_images);
    if (!a.export_bank.empty()) {
        write_bank(banks.train, a.export_bank);
    }
    const std::vector<ResultRow> rows = run_protocol(a.protocol, banks, cfg, label, a.shots, out);
    fs::path results = a.results;
    if (results.empty()) {
        results = (a.ckpt.empty() ? fs::path(".") : fs::path(a.ckpt).parent_path()) / "results.csv";
    }
    if (results.has_parent_path()) {
        fs::create_directories(results.parent_path());
    }
    append_results(results, rows);
    write_text(results.parent_path() / "resolved_config.toml", format_config(cfg));
    return kExitOk;
}

struct AblateArgs {
    CommonArgs common;
    std::string grid;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string data;
    std::string out;
    std::int64_t max_steps = 0;
};

// Grid shorthands; any config key works as well.
std::string grid_key(const std::string& name) {
    if (name == "lambda" || name == "λ") {
        return "loss.weighting_parameter_lambda";
    }
    if (name == "ratio") {
        return "masking.mask_percentage_1st_round";
    }
    if (name == "condenser") {
        return "loss.condenser";
    }
    return name;
}

std::string grid_value(const std::string& name, const std::string& v) {
    if (name == "ratio") {
        // Given as a fraction, stored in percent.
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.10g", std::stod(v) * 100.0);
        return buf;
    }
    return v;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const auto eq = a.grid.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--grid expects name=v1,v2,...");
    }
    const std::string name = a.grid.substr(0, eq);
    std::vector<std::string> values;
    std::stringstream vs(a.grid.substr(eq + 1));
    for (std::string v; std::getline(vs, v, ',');) {
        if (!v.empty()) {
            values.push_back(v);
        }
    }
    if (values.empty() || a.seeds.empty()) {
        throw ConfigError("--grid needs at least one value and --seeds at least one seed");
    }
    // Validate every cell before training any of them.
    std::vector<RunConfig> cells;
    for (const auto& v : values) {
        CommonArgs c = a.common;
        c.overrides.push_back(grid_key(name) + "=" + grid_value(name, v));
        cells.push_back(resolve(c));
    }
    const ImageDataset ds = load_dataset(a.data, "train");
    const fs::path root = a.out;
    fs::create_directories(root);
    std::ofstream table(root / "ablation.csv", std::ios::trunc);
    table << "parameter,value,seeds,knn_mean,knn_std\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::vector<double> accs;
        for (std::uint64_t seed : a.seeds) {
            RunConfig cfg = cells[i];
            cfg.train.seed = seed;
            const fs::path dir = root / (name + "_" + values[i]) / ("seed" + std::to_string(seed));
            out << "cell " << name << "=" << values[i] << " seed " << seed << "\n";
            const TrainState st = pretrain(cfg, ds, dir, a.max_steps, "", true, out);
            const Banks banks = extract_banks(st.teacher, cfg, a.data, std::nullopt);
            const auto rows = run_protocol("knn", banks, cfg, name + "=" + values[i], {}, out);
            append_results(root / "results.csv", rows);
            accs.push_back(rows.front().accuracy);
        }
        double mean = 0.0;
        for (double x : accs) {
            mean += x / static_cast<double>(accs.size());
        }
        double var = 0.0;
        for (double x : accs) {
            var += (x - mean) * (x - mean) / static_cast<double>(accs.size());
        }
        table << name << "," << values[i] << "," << accs.size() << "," << fixed(mean, 4) << ","
              << fixed(std::sqrt(var), 4) << "\n";
        table.flush();
        out << name << "=" << values[i] << ": knn " << fixed(mean) << " +- " << fixed(std::sqrt(var)) << "%\n";
    }
    return kExitOk;
}

int cmd_ingest(const std::string& cifar, const std::string& out_dir, std::ostream& out) {
    fs::create_directories(out_dir);
    for (const std::string split : {"train", "test"}) {
        const ImageDataset ds = ingest_cifar10(cifar, split);
        write_mimg(ds, fs::path(out_dir) / (split + ".mimg"));
        out << split << ": " << ds.count << " images\n";
    }
    return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--config", c.config, "Config file (key = value)")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set codebook.size=512");
    cmd->add_option("--seed", c.seed, "Seed for every random stream");
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked online codebook assignment pre-training and frozen-feature evaluation", "moca"};
    app.require_subcommand(1);

    PretrainArgs pa;
    CLI::App* pre = app.add_subcommand("pretrain", "Pre-train a student/teacher pair");
    add_common(pre, pa.common);
    pre->add_option("--data", pa.data, "CIFAR-10 binary batches or MIMG container")->required();
    pre->add_option("--out", pa.out, "Output directory")->required();
    pre->add_option("--resume", pa.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
    pre->add_option("--max-steps", pa.max_steps, "Stop after this many steps in total");
    pre->add_flag("--quiet", pa.quiet, "No progress lines");

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a teacher with a frozen-feature protocol");
    add_common(ev, ea.common);
    ev->add_option("protocol", ea.protocol, "knn, linear or lowshot")
        ->required()
        ->check(CLI::IsMember({"knn", "linear", "lowshot"}));
    ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->check(CLI::ExistingFile);
    ev->add_flag("--random-init", ea.random_init, "Evaluate a randomly initialized teacher instead");
    ev->add_option("--data", ea.data, "Dataset with train and test splits")->required();
    ev->add_option("--k", ea.k, "Neighbours for knn");
    ev->add_option("--shots", ea.shots, "Images per class for lowshot")->delimiter(',');
    ev->add_option("--bank-images", ea.bank_images, "Train images in the feature bank (default run.train_images)");
    ev->add_option("--results", ea.results, "Results CSV to append to");
    ev->add_option("--export-bank", ea.export_bank, "Write the train feature bank (MIMF)");

    AblateArgs aa;
    CLI::App* ab = app.add_subcommand("ablate", "Train and k-NN-evaluate a one-parameter grid");
    add_common(ab, aa.common);
    ab->add_option("--grid", aa.grid, "e.g. lambda=1.0,0.5,0.0 | ratio=0.55,0.75 | condenser=on,off")->required();
    ab->add_option("--seeds", aa.seeds, "Seeds shared by every cell")->delimiter(',');
    ab->add_option("--data", aa.data, "Dataset")->required();
    ab->add_option("--out", aa.out, "Output directory")->required();
    ab->add_option("--max-steps", aa.max_steps, "Cap on steps per cell");

    std::string cifar;
    std::string ingest_out;
    CLI::App* ing = app.add_subcommand("ingest", "Convert CIFAR-10 binary batches to MIMG containers");
    ing->add_option("--cifar", cifar, "Directory of CIFAR-10 binary batches")->required();
    ing->add_option("--out", ingest_out, "Output directory")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (pre->parsed()) {
            return cmd_pretrain(pa, out);
        }
        if (ev->parsed()) {
            return cmd_eval(ea, out);
        }
        if (ab->parsed()) {
            return cmd_ablate(aa, out);
        }
        return cmd_ingest(cifar, ingest_out, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractViolation& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const SamplingError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    }
}

} // namespace moca
