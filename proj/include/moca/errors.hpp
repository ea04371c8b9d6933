// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moca {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

// Operand shapes are not conformable. Messages name both shapes.
class ShapeError : public ContractViolation {
public:
    using ContractViolation::ContractViolation;
};

// Invalid hyperparameters or config text (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed dataset or checkpoint bytes (exit code 3).
class FormatError : public Error {
public:
    using Error::Error;
};

// Non-finite values during training (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

// Not enough items to draw a requested sample, e.g. a class with fewer
// images than the low-shot protocol asks for (exit code 3).
class SamplingError : public Error {
public:
    using Error::Error;
};

} // namespace moca
