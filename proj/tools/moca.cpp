// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "moca/cli/commands.hpp"

int main(int argc, char** argv) {
    return moca::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
