// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap shared handle: copies alias the same storage, like the
// parameter handles of most deep learning frameworks. Values are never
// mutated by operations; only the optimizer and EMA write into parameter
// storage, and they do so between forward passes.
//
// Recording happens only while a Tape is alive on the current thread and at
// least one operand requires a gradient. Anything computed without a tape,
// or from detached operands, is a constant as far as backward() is concerned.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "moca/errors.hpp"

namespace moca {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::string to_string(const Shape& shape);
std::string to_string(DType dtype);
std::int64_t shape_numel(const Shape& shape);

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

// Calls f(float{}) or f(double{}) depending on the runtime dtype.
template <class F>
decltype(auto) visit_dtype(DType dtype, F&& f) {
    if (dtype == DType::f64) {
        return f(double{});
    }
    return f(float{});
}

namespace detail {
struct TensorImpl;
struct Node;
} // namespace detail

class Tape;

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dtype = DType::f32);
    static Tensor full(Shape shape, double value, DType dtype = DType::f32);
    static Tensor from_vector(Shape shape, std::vector<float> values);
    static Tensor from_vector(Shape shape, std::vector<double> values);
    // Converts `values` to `dtype`.
    static Tensor from_f64(Shape shape, std::span<const double> values, DType dtype);
    static Tensor scalar(double value, DType dtype = DType::f32);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(int axis) const;
    int ndim() const;
    std::int64_t numel() const;
    DType dtype() const;

    template <class T>
    std::span<const T> data() const;
    // Writable view of the storage. Reserved for parameter updates and for
    // filling freshly created tensors; never call it on a tensor that a live
    // tape has already consumed.
    template <class T>
    std::span<T> mutable_data();

    double item() const;
    double at(std::int64_t flat_index) const;
    std::vector<double> to_f64_vector() const;

    bool requires_grad() const;
    // Marks a leaf as trainable. Throws ContractViolation on non-leaves.
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const;
    // Accumulated gradient; undefined until a backward pass reaches this leaf.
    Tensor grad() const;
    void zero_grad();

    // Shares storage, never records, never accumulates gradient.
    Tensor detach() const;
    // Deep copy, detached.
    Tensor clone() const;
    // Detached deep copy converted to `dtype`.
    Tensor to(DType dtype) const;
    // Same storage and node, new shape. Recorded on the tape like any op.
    Tensor reshape(Shape shape) const;

    bool shares_storage_with(const Tensor& other) const;
    // Bitwise equality of shape, dtype and payload.
    bool bitwise_equal(const Tensor& other) const;

private:
    friend struct detail::TensorImpl;
    friend class Tape;
    friend struct TensorAccess;

    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

    std::shared_ptr<detail::TensorImpl> impl_;
};

template <>
std::span<const float> Tensor::data<float>() const;
template <>
std::span<const double> Tensor::data<double>() const;
template <>
std::span<float> Tensor::mutable_data<float>();
template <>
std::span<double> Tensor::mutable_data<double>();

// The ordered record of differentiable operations for one forward pass.
// Constructing a Tape makes it the active tape of the calling thread until it
// is destroyed; tapes nest. Nodes are appended in execution order, so every
// node's parents precede it.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1 and propagates to every leaf that requires a
    // gradient. Leaf gradients accumulate across calls.
    void backward(const Tensor& root);

    static Tape* active();

private:
    friend struct TensorAccess;

    std::vector<std::shared_ptr<detail::Node>> nodes_;
    Tape* previous_ = nullptr;
};

// Suspends recording on this thread for its lifetime.
class NoTapeGuard {
public:
    NoTapeGuard();
    ~NoTapeGuard();
    NoTapeGuard(const NoTapeGuard&) = delete;
    NoTapeGuard& operator=(const NoTapeGuard&) = delete;

private:
    Tape* saved_;
};

// Runs backward on the active tape.
void backward(const Tensor& root);

// Plumbing for operation implementations. Not part of the user-facing API.
struct TensorAccess {
    using BackwardFn = std::function<void(const Tensor& out_grad)>;

    static Tensor make(Shape shape, DType dtype);

    // Returns true when an op over `inputs` must be recorded.
    static bool should_record(std::span<const Tensor> inputs);

    // Attaches `fn` to `out` on the active tape. No-op unless should_record().
    static void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);

    // Writable gradient buffer of `t`, zero-initialized on first use. Empty
    // when `t` does not require a gradient.
    template <class T>
    static std::span<T> grad_buffer(const Tensor& t);
};

} // namespace moca
