// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// `key = value` run configuration. Keys are grouped in [sections]; a dotted
// key (`codebook.size = 4096`) may also be written outside any section.
// Percentages are given in percent, as in the model-setting table.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "moca/eval/eval.hpp"
#include "moca/pipeline/trainer.hpp"

namespace moca {

struct RunConfig {
    TrainConfig train;
    KnnOptions knn;
    LinearProbeOptions probe;
    LowShotOptions lowshot;
};

// Parses `text` over the defaults. Throws ConfigError naming `origin` and the
// line for unknown keys, duplicates, malformed lines and bad values.
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");

// Applies one `key = value` (or `section.key=value`) override.
void apply_override(RunConfig& cfg, std::string_view assignment);

// Every key with its current value, grouped by section; parse_config of the
// result reproduces `cfg` exactly.
std::string format_config(const RunConfig& cfg);

// All recognised dotted keys, in output order.
std::vector<std::string> config_keys();

} // namespace moca
