// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/cli/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "moca/errors.hpp"

namespace moca {

namespace {

// Thrown by value parsers; the caller adds the location.
struct BadValue {
    std::string what;
};

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(std::string_view v) {
    v = trim(v);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
        return std::string(v.substr(1, v.size() - 2));
    }
    return std::string(v);
}

double to_double(std::string_view v) {
    const std::string s = unquote(v);
    double out = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        throw BadValue{"expected a number, got '" + s + "'"};
    }
    return out;
}

template <typename T = std::int64_t>
T to_int(std::string_view v) {
    const std::string s = unquote(v);
    T out = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
        throw BadValue{"expected an integer, got '" + s + "'"};
    }
    return out;
}

bool to_bool(std::string_view v) {
    const std::string s = unquote(v);
    if (s == "true" || s == "on") {
        return true;
    }
    if (s == "false" || s == "off") {
        return false;
    }
    throw BadValue{"expected true or false, got '" + s + "'"};
}

std::string num(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

// Shortest decimal p with p / 100 == f, so percentages survive a roundtrip.
std::string percent(double f) {
    for (int prec = 1; prec <= 17; ++prec) {
        char buf[64];
        const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, f * 100.0, std::chars_format::general, prec);
        double back = 0.0;
        std::from_chars(buf, p, back);
        if (back / 100.0 == f) {
            return std::string(buf, p);
        }
    }
    return num(f * 100.0);
}

std::string boolean(bool b) { return b ? "true" : "false"; }

struct Field {
    std::string key;  // section.name
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define MOCA_INT(k, member)                                                              \
    Field { k, [](RunConfig& c, std::string_view v) { c.member = to_int(v); },          \
            [](const RunConfig& c) { return std::to_string(c.member); } }
#define MOCA_UINT(k, member)                                                                          \
    Field { k, [](RunConfig& c, std::string_view v) {                                                \
               c.member = to_int<std::uint64_t>(v); },                                                \
            [](const RunConfig& c) { return std::to_string(c.member); } }
#define MOCA_NUM(k, member)                                                              \
    Field { k, [](RunConfig& c, std::string_view v) { c.member = to_double(v); },       \
            [](const RunConfig& c) { return num(c.member); } }
#define MOCA_PCT(k, member)                                                                      \
    Field { k, [](RunConfig& c, std::string_view v) { c.member = to_double(v) / 100.0; },       \
            [](const RunConfig& c) { return percent(c.member); } }
#define MOCA_BOOL(k, member)                                                             \
    Field { k, [](RunConfig& c, std::string_view v) { c.member = to_bool(v); },         \
            [](const RunConfig& c) { return boolean(c.member); } }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        MOCA_INT("codebook.size", train.codebook_size),
        MOCA_INT("codebook.new_words_per_training_step", train.new_words),
        MOCA_INT("codebook.bow_border", train.border),
        MOCA_NUM("codebook.msd_initial", train.msd_init),
        MOCA_NUM("codebook.msd_momentum", train.msd_momentum),
        MOCA_NUM("codebook.msd_floor", train.msd_floor),

        MOCA_PCT("masking.mask_percentage_1st_round", train.masking.ratio_round1),
        MOCA_PCT("masking.mask_percentage_2nd_round", train.masking.ratio_round2),
        MOCA_PCT("masking.percentage_of_predicted_tokens", train.masking.dec_fraction),
        MOCA_BOOL("masking.partial_decoding", train.masking.partial_decoding),
        MOCA_BOOL("masking.second_round", train.masking.second_round),

        MOCA_INT("decoder.intermediate_layer", train.model.tap_layer),
        MOCA_INT("decoder.depth", train.model.dec_depth),
        MOCA_INT("decoder.embedding_size", train.model.d_dec),
        MOCA_INT("decoder.self_attention_heads", train.model.dec_heads),

        MOCA_NUM("loss.weighting_parameter_lambda", train.loss.lambda),
        MOCA_NUM("loss.tau_global", train.loss.tau_b),
        MOCA_NUM("loss.tau_token", train.loss.tau_d),
        MOCA_BOOL("loss.loss_on_visible", train.loss.loss_on_visible),
        MOCA_BOOL("loss.condenser", train.loss.condenser),
        Field{"loss.global_token",
              [](RunConfig& c, std::string_view v) {
                  const std::string s = unquote(v);
                  if (s == "avg") {
                      c.train.loss.global_token = GlobalToken::avg;
                  } else if (s == "cls") {
                      c.train.loss.global_token = GlobalToken::cls;
                  } else {
                      throw BadValue{"expected avg or cls, got '" + s + "'"};
                  }
              },
              [](const RunConfig& c) {
                  return std::string(c.train.loss.global_token == GlobalToken::avg ? "\"avg\"" : "\"cls\"");
              }},

        MOCA_NUM("optimization.teacher_momentum", train.optim.teacher_momentum),
        Field{"optimization.optimizer",
              [](RunConfig&, std::string_view v) {
                  if (unquote(v) != "AdamW") {
                      throw BadValue{"only AdamW is available"};
                  }
              },
              [](const RunConfig&) { return std::string("\"AdamW\""); }},
        MOCA_NUM("optimization.base_learning_rate", train.optim.base_lr),
        MOCA_NUM("optimization.weight_decay", train.optim.weight_decay),
        MOCA_NUM("optimization.optimizer_momentum_beta1", train.optim.beta1),
        MOCA_NUM("optimization.optimizer_momentum_beta2", train.optim.beta2),
        MOCA_INT("optimization.batch_size", train.optim.batch_size),
        Field{"optimization.learning_rate_schedule",
              [](RunConfig&, std::string_view v) {
                  if (unquote(v) != "cosine") {
                      throw BadValue{"only cosine decay is available"};
                  }
              },
              [](const RunConfig&) { return std::string("\"cosine\""); }},
        MOCA_INT("optimization.warmup_epochs", train.optim.warmup_epochs),
        MOCA_INT("optimization.epochs", train.optim.epochs),

        MOCA_INT("model.image_size", train.model.image_size),
        MOCA_INT("model.patch_size", train.model.patch_size),
        MOCA_INT("model.channels", train.model.channels),
        MOCA_INT("model.depth", train.model.depth),
        MOCA_INT("model.embedding_size", train.model.d_enc),
        MOCA_INT("model.self_attention_heads", train.model.heads),
        MOCA_INT("model.mlp_ratio", train.model.mlp_ratio),

        MOCA_BOOL("augmentation.enabled", train.augment.enabled),
        MOCA_NUM("augmentation.crop_scale_min", train.augment.crop_scale_min),
        MOCA_NUM("augmentation.crop_scale_max", train.augment.crop_scale_max),
        MOCA_NUM("augmentation.crop_ratio_min", train.augment.crop_ratio_min),
        MOCA_NUM("augmentation.crop_ratio_max", train.augment.crop_ratio_max),
        MOCA_NUM("augmentation.flip_probability", train.augment.flip_prob),
        MOCA_NUM("augmentation.brightness", train.augment.brightness),
        MOCA_NUM("augmentation.contrast", train.augment.contrast),
        MOCA_NUM("augmentation.grayscale_probability", train.augment.grayscale_prob),

        MOCA_UINT("run.seed", train.seed),
        MOCA_BOOL("run.deterministic", train.deterministic),
        MOCA_INT("run.train_images", train.train_images),
        MOCA_INT("run.checkpoint_every_epochs", train.checkpoint_every_epochs),
        Field{"run.dtype",
              [](RunConfig& c, std::string_view v) {
                  const std::string s = unquote(v);
                  if (s == "f32") {
                      c.train.dtype = DType::f32;
                  } else if (s == "f64") {
                      c.train.dtype = DType::f64;
                  } else {
                      throw BadValue{"expected f32 or f64, got '" + s + "'"};
                  }
              },
              [](const RunConfig& c) { return std::string(c.train.dtype == DType::f32 ? "\"f32\"" : "\"f64\""); }},

        MOCA_INT("eval.knn_k", knn.k),
        MOCA_NUM("eval.knn_temperature", knn.temperature),
        MOCA_BOOL("eval.knn_weighted", knn.weighted),
        MOCA_INT("eval.linear_epochs", probe.epochs),
        MOCA_NUM("eval.linear_learning_rate", probe.lr),
        MOCA_NUM("eval.linear_momentum", probe.momentum),
        MOCA_NUM("eval.linear_weight_decay", probe.weight_decay),
        MOCA_INT("eval.linear_batch_size", probe.batch_size),
        MOCA_INT("eval.lowshot_splits", lowshot.splits),
        Field{"eval.lowshot_l2_grid",
              [](RunConfig& c, std::string_view v) {
                  std::string_view s = trim(v);
                  if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
                      throw BadValue{"expected a list like [1e-4, 1e-3]"};
                  }
                  s = s.substr(1, s.size() - 2);
                  std::vector<double> grid;
                  while (!trim(s).empty()) {
                      const auto comma = s.find(',');
                      grid.push_back(to_double(trim(s.substr(0, comma))));
                      s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
                  }
                  if (grid.empty()) {
                      throw BadValue{"the l2 grid needs at least one value"};
                  }
                  c.lowshot.l2_grid = std::move(grid);
              },
              [](const RunConfig& c) {
                  std::string out = "[";
                  for (std::size_t i = 0; i < c.lowshot.l2_grid.size(); ++i) {
                      out += (i ? ", " : "") + num(c.lowshot.l2_grid[i]);
                  }
                  return out + "]";
              }},
        MOCA_INT("eval.lowshot_validation_per_class", lowshot.validation_per_class),
        MOCA_INT("eval.lowshot_max_iterations", lowshot.max_iters),
    };
    return table;
}

#undef MOCA_INT
#undef MOCA_UINT
#undef MOCA_NUM
#undef MOCA_PCT
#undef MOCA_BOOL

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            return &f;
        }
    }
    return nullptr;
}

void assign(RunConfig& cfg, const std::string& key, std::string_view value, const std::string& where) {
    const Field* f = find_field(key);
    if (f == nullptr) {
        throw ConfigError(where + ": unknown key '" + key + "'");
    }
    try {
        f->set(cfg, value);
    } catch (const BadValue& e) {
        throw ConfigError(where + ": " + key + ": " + e.what);
    }
}

std::string strip_comment(std::string_view line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quote != 0) {
            quote = ch == quote ? 0 : quote;
        } else if (ch == '"' || ch == '\'') {
            quote = ch;
        } else if (ch == '#') {
            return std::string(line.substr(0, i));
        }
    }
    return std::string(line);
}

} // namespace

RunConfig parse_config(std::string_view text, const std::string& origin) {
    RunConfig cfg;
    std::string section;
    std::set<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string raw;
    for (int line_no = 1; std::getline(in, raw); ++line_no) {
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::string stripped = strip_comment(raw);
        const std::string_view line = trim(stripped);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(where + ": malformed section header '" + std::string(line) + "'");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
        }
        const std::string name(trim(line.substr(0, eq)));
        const std::string key = section.empty() ? name : section + "." + name;
        if (!seen.insert(key).second) {
            throw ConfigError(where + ": duplicate key '" + key + "'");
        }
        assign(cfg, key, line.substr(eq + 1), where);
    }
    return cfg;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "': expected key=value");
    }
    assign(cfg, std::string(trim(assignment.substr(0, eq))), assignment.substr(eq + 1),
           "override '" + std::string(assignment) + "'");
}

std::string format_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = f.key.substr(0, dot);
        if (s != section) {
            out += (section.empty() ? "" : "\n") + ("[" + s + "]\n");
            section = s;
        }
        out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) {
        keys.push_back(f.key);
    }
    return keys;
}

} // namespace moca
