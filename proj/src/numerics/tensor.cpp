// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace moca {

namespace detail {

struct Storage {
    std::vector<float> f32;
    std::vector<double> f64;
};

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    std::shared_ptr<Storage> storage;
    bool requires_grad = false;
    std::shared_ptr<Node> node;
    Tensor grad;
};

struct Node {
    std::vector<Tensor> inputs;
    std::weak_ptr<TensorImpl> output;
    TensorAccess::BackwardFn backward;
    const Tape* tape = nullptr;
};

namespace {
thread_local Tape* g_active_tape = nullptr;
} // namespace

} // namespace detail

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            os << ", ";
        }
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::string to_string(DType dtype) { return dtype == DType::f64 ? "f64" : "f32"; }

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) {
            throw ShapeError("negative dimension in shape " + to_string(shape));
        }
        n *= d;
    }
    return n;
}

Tensor TensorAccess::make(Shape shape, DType dtype) {
    auto impl = std::make_shared<detail::TensorImpl>();
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    impl->shape = std::move(shape);
    impl->dtype = dtype;
    impl->storage = std::make_shared<detail::Storage>();
    if (dtype == DType::f64) {
        impl->storage->f64.assign(n, 0.0);
    } else {
        impl->storage->f32.assign(n, 0.0f);
    }
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return TensorAccess::make(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t = zeros(std::move(shape), dtype);
    visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_vector: shape " + to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    Tensor t = zeros(std::move(shape), DType::f32);
    t.impl_->storage->f32 = std::move(values);
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_vector: shape " + to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    Tensor t = zeros(std::move(shape), DType::f64);
    t.impl_->storage->f64 = std::move(values);
    return t;
}

Tensor Tensor::from_f64(Shape shape, std::span<const double> values, DType dtype) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_f64: shape " + to_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    Tensor t = zeros(std::move(shape), dtype);
    visit_dtype(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        for (std::size_t i = 0; i < values.size(); ++i) {
            d[i] = static_cast<T>(values[i]);
        }
    });
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
    const int n = ndim();
    const int a = axis < 0 ? axis + n : axis;
    if (a < 0 || a >= n) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
    }
    return impl_->shape[static_cast<std::size_t>(a)];
}

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

std::int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

DType Tensor::dtype() const { return impl_->dtype; }

template <>
std::span<const float> Tensor::data<float>() const {
    if (impl_->dtype != DType::f32) {
        throw ContractViolation("tensor holds f64, requested f32 view");
    }
    return impl_->storage->f32;
}

template <>
std::span<const double> Tensor::data<double>() const {
    if (impl_->dtype != DType::f64) {
        throw ContractViolation("tensor holds f32, requested f64 view");
    }
    return impl_->storage->f64;
}

template <>
std::span<float> Tensor::mutable_data<float>() {
    if (impl_->dtype != DType::f32) {
        throw ContractViolation("tensor holds f64, requested f32 view");
    }
    return impl_->storage->f32;
}

template <>
std::span<double> Tensor::mutable_data<double>() {
    if (impl_->dtype != DType::f64) {
        throw ContractViolation("tensor holds f32, requested f64 view");
    }
    return impl_->storage->f64;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on tensor of shape " + to_string(shape()));
    }
    return at(0);
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= numel()) {
        throw ContractViolation("flat index " + std::to_string(flat_index) + " out of range for shape " +
                                to_string(shape()));
    }
    const auto i = static_cast<std::size_t>(flat_index);
    return impl_->dtype == DType::f64 ? impl_->storage->f64[i] : static_cast<double>(impl_->storage->f32[i]);
}

std::vector<double> Tensor::to_f64_vector() const {
    if (impl_->dtype == DType::f64) {
        return impl_->storage->f64;
    }
    const auto& src = impl_->storage->f32;
    return {src.begin(), src.end()};
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    if (impl_->node) {
        throw ContractViolation("set_requires_grad on a non-leaf tensor");
    }
    impl_->requires_grad = value;
    return *this;
}

bool Tensor::is_leaf() const { return impl_->node == nullptr; }

Tensor Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad = Tensor(); }

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->storage = impl_->storage;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = impl_->shape;
    impl->dtype = impl_->dtype;
    impl->storage = std::make_shared<detail::Storage>(*impl_->storage);
    return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dtype) const {
    if (dtype == impl_->dtype) {
        return clone();
    }
    const auto values = to_f64_vector();
    return from_f64(impl_->shape, values, dtype);
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: cannot view " + to_string(impl_->shape) + " as " + to_string(shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = impl_->dtype;
    impl->storage = impl_->storage;
    Tensor out(std::move(impl));
    const Tensor self = *this;
    TensorAccess::record(out, {self}, [self](const Tensor& g) {
        visit_dtype(self.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dst = TensorAccess::grad_buffer<T>(self);
            auto src = g.data<T>();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                dst[i] += src[i];
            }
        });
    });
    return out;
}

bool Tensor::shares_storage_with(const Tensor& other) const {
    return impl_ && other.impl_ && impl_->storage == other.impl_->storage;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    if (!defined() || !other.defined()) {
        return defined() == other.defined();
    }
    if (shape() != other.shape() || dtype() != other.dtype()) {
        return false;
    }
    if (dtype() == DType::f64) {
        const auto& a = impl_->storage->f64;
        const auto& b = other.impl_->storage->f64;
        return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    }
    const auto& a = impl_->storage->f32;
    const auto& b = other.impl_->storage->f32;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

bool TensorAccess::should_record(std::span<const Tensor> inputs) {
    if (detail::g_active_tape == nullptr) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void TensorAccess::record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
    if (!should_record(inputs)) {
        return;
    }
    auto node = std::make_shared<detail::Node>();
    node->inputs = std::move(inputs);
    node->output = out.impl_;
    node->backward = std::move(fn);
    node->tape = detail::g_active_tape;
    out.impl_->requires_grad = true;
    out.impl_->node = node;
    detail::g_active_tape->nodes_.push_back(std::move(node));
}

template <class T>
std::span<T> TensorAccess::grad_buffer(const Tensor& t) {
    if (!t.requires_grad()) {
        return {};
    }
    auto& impl = *t.impl_;
    if (!impl.grad.defined()) {
        impl.grad = Tensor::zeros(impl.shape, impl.dtype);
    }
    return impl.grad.mutable_data<T>();
}

template std::span<float> TensorAccess::grad_buffer<float>(const Tensor&);
template std::span<double> TensorAccess::grad_buffer<double>(const Tensor&);

Tape::Tape() : previous_(detail::g_active_tape) { detail::g_active_tape = this; }

Tape::~Tape() {
    detail::g_active_tape = previous_;
    // Break node -> input -> node chains iteratively so deep graphs do not
    // recurse through shared_ptr destructors.
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)->inputs.clear();
        (*it)->backward = nullptr;
    }
}

Tape* Tape::active() { return detail::g_active_tape; }

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1) {
        throw ContractViolation("backward: root must be a scalar, got shape " +
                                (root.defined() ? to_string(root.shape()) : std::string("<undefined>")));
    }
    const auto& root_node = root.impl_->node;
    if (!root_node || root_node->tape != this) {
        throw ContractViolation("backward: root is not recorded on this tape");
    }
    visit_dtype(root.dtype(), [&](auto tag) {
        using T = decltype(tag);
        TensorAccess::grad_buffer<T>(root)[0] += T(1);
    });
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& node = **it;
        auto out = node.output.lock();
        if (!out || !out->grad.defined() || !node.backward) {
            continue;
        }
        const Tensor g = out->grad;
        node.backward(g);
        // Interior gradients are not retained.
        out->grad = Tensor();
    }
}

NoTapeGuard::NoTapeGuard() : saved_(detail::g_active_tape) { detail::g_active_tape = nullptr; }

NoTapeGuard::~NoTapeGuard() { detail::g_active_tape = saved_; }

void backward(const Tensor& root) {
    Tape* tape = Tape::active();
    if (tape == nullptr) {
        throw ContractViolation("backward: no active tape");
    }
    tape->backward(root);
}

} // namespace moca
