// Copyright (c) 2026, The MOCA-CPP Authors
// SPDX-License-Identifier: Apache-2.0

#include "moca/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "moca/numerics/gemm.hpp"
#include "moca/numerics/parallel.hpp"

namespace moca {

namespace {

using TA = TensorAccess;

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ContractViolation(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " +
                                to_string(b.dtype()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    require_same_dtype(a, b, op);
}

void require_ndim(const Tensor& a, int n, const char* op) {
    if (a.ndim() != n) {
        throw ShapeError(std::string(op) + ": expected " + std::to_string(n) + "-d tensor, got " +
                         to_string(a.shape()));
    }
}

std::int64_t last_dim(const Tensor& x, const char* op) {
    if (x.ndim() < 1) {
        throw ShapeError(std::string(op) + ": expected at least 1-d tensor, got " + to_string(x.shape()));
    }
    return x.dim(-1);
}

template <class T>
void accumulate(std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    require_ndim(a, 2, "matmul");
    require_ndim(b, 2, "matmul");
    require_same_dtype(a, b, "matmul");
    const std::int64_t n = a.dim(0);
    const std::int64_t k = a.dim(1);
    const std::int64_t kb = transpose_b ? b.dim(1) : b.dim(0);
    const std::int64_t m = transpose_b ? b.dim(0) : b.dim(1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) +
                         (transpose_b ? " x transpose " : " x ") + to_string(b.shape()));
    }
    Tensor out = TA::make({n, m}, a.dtype());
    visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto c = out.mutable_data<T>();
        if (transpose_b) {
            std::vector<T> bt(static_cast<std::size_t>(k * m));
            gemm::transpose<T>(b.data<T>().data(), bt.data(), m, k);
            gemm::gemm_nn<T>(a.data<T>().data(), bt.data(), c.data(), n, k, m);
        } else {
            gemm::gemm_nn<T>(a.data<T>().data(), b.data<T>().data(), c.data(), n, k, m);
        }
    });
    TA::record(out, {a, b}, [a, b, transpose_b, n, k, m](const Tensor& g) {
        visit_dtype(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gd = g.data<T>().data();
            if (auto da = TA::grad_buffer<T>(a); !da.empty()) {
                if (transpose_b) {
                    // dA[n,k] += dC[n,m] . B[m,k]
                    gemm::gemm_nn<T>(gd, b.data<T>().data(), da.data(), n, m, k);
                } else {
                    // dA[n,k] += dC[n,m] . B[k,m]^T
                    std::vector<T> bt(static_cast<std::size_t>(k * m));
                    gemm::transpose<T>(b.data<T>().data(), bt.data(), k, m);
                    gemm::gemm_nn<T>(gd, bt.data(), da.data(), n, m, k);
                }
            }
            if (auto db = TA::grad_buffer<T>(b); !db.empty()) {
                if (transpose_b) {
                    // dB[m,k] += dC^T . A
                    gemm::gemm_tn<T>(gd, a.data<T>().data(), db.data(), n, m, k);
                } else {
                    // dB[k,m] += A^T . dC
                    gemm::gemm_tn<T>(a.data<T>().data(), gd, db.data(), n, k, m);
                }
            }
        });
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    require_ndim(a, 2, "transpose");
    const std::int64_t r = a.dim(0);
    const std::int64_t c = a.dim(1);
    Tensor out = TA::make({c, r}, a.dtype());
    visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        gemm::transpose<T>(a.data<T>().data(), out.mutable_data<T>().data(), r, c);
    });
    TA::record(out, {a}, [a, r, c](const Tensor& g) {
        visit_dtype(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto da = TA::grad_buffer<T>(a);
            auto gd = g.data<T>();
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) {
                    da[i * c + j] += gd[j * r + i];
                }
            }
        });
    });
    return out;
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, name);
    Tensor out = TA::make(a.shape(), a.dtype());
    visit_dtype(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto o = out.mutable_data<T>();
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] = fwd(x[i], y[i]);
        }
    });
    TA::record(out, {a, b}, [a, b, bwd](const Tensor& g) {
        visit_dtype(a.dtype(), [&](auto tag) {
            using T = decltype(tag);
            bwd(tag, g.data<T>(), a, b);
        });
    });
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](auto x, auto y) { return x + y; },
        [](auto tag, auto g, const Tensor& x, const Tensor& y) {
            using T = decltype(tag);
            if (auto d = TA::grad_buffer<T>(x); !d.empty()) {
                accumulate<T>(d, g);
            }
            if (auto d = TA::grad_buffer<T>(y); !d.empty()) {
                accumulate<T>(d, g);
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](auto x, auto y) { return x - y; },
        [](auto tag, auto g, const Tensor& x, const Tensor& y) {
            using T = decltype(tag);
            if (auto d = TA::grad_buffer<T>(x); !d.empty()) {
                accumulate<T>(d, g);
            }
            if (auto d = TA::grad_buffer<T>(y); !d.empty()) {
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] -= g[i];
                }
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](auto x, auto y) { return x * y; },
        [](auto tag, auto g, const Tensor& x, const Tensor& y) {
            using T = decltype(tag);
            auto xv = x.data<T>();
            auto yv = y.data<T>();
            if (auto d = TA::grad_buffer<T>(x); !d.empty()) {
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] += g[i] * yv[i];
                }
            }
            if (auto d = TA::grad_buffer<T>(y); !d.empty()) {
                for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] += g[i] * xv[i];
                }
            }
        });
}

Tensor scale(const Tensor& x, double factor) {
    Tensor out = TA::make(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        const T f = static_cast<T>(factor);
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] = in[i] * f;
        }
    });
    TA::record(out, {x}, [x, factor](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto d = TA::grad_buffer<T>(x);
            auto gd = g.data<T>();
            const T f = static_cast<T>(factor);
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += gd[i] * f;
            }
        });
    });
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_same_dtype(x, bias, "add_bias");
    const std::int64_t m = last_dim(x, "add_bias");
    if (bias.numel() != m || (bias.ndim() != 1 && !(bias.ndim() == 2 && bias.dim(0) == 1))) {
        throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match rows of " +
                         to_string(x.shape()));
    }
    const std::int64_t rows = x.numel() / std::max<std::int64_t>(m, 1);
    Tensor out = TA::make(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto bv = bias.data<T>();
        auto o = out.mutable_data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < m; ++j) {
                o[r * m + j] = in[r * m + j] + bv[j];
            }
        }
    });
    TA::record(out, {x, bias}, [x, bias, rows, m](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.data<T>();
            if (auto d = TA::grad_buffer<T>(x); !d.empty()) {
                accumulate<T>(d, gd);
            }
            if (auto d = TA::grad_buffer<T>(bias); !d.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < m; ++j) {
                        d[j] += gd[r * m + j];
                    }
                }
            }
        });
    });
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) {
        throw ContractViolation("concat: no operands");
    }
    const Tensor& first = parts.front();
    const int nd = first.ndim();
    const int ax = axis < 0 ? axis + nd : axis;
    if (ax < 0 || ax >= nd) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first.shape()));
    }
    Shape out_shape = first.shape();
    out_shape[static_cast<std::size_t>(ax)] = 0;
    for (const auto& p : parts) {
        require_same_dtype(first, p, "concat");
        if (p.ndim() != nd) {
            throw ShapeError("concat: rank mismatch " + to_string(first.shape()) + " vs " + to_string(p.shape()));
        }
        for (int d = 0; d < nd; ++d) {
            if (d != ax && p.dim(d) != first.dim(d)) {
                throw ShapeError("concat: shape mismatch " + to_string(first.shape()) + " vs " +
                                 to_string(p.shape()));
            }
        }
        out_shape[static_cast<std::size_t>(ax)] += p.dim(ax);
    }
    std::int64_t outer = 1;
    for (int d = 0; d < ax; ++d) {
        outer *= first.dim(d);
    }
    std::int64_t inner = 1;
    for (int d = ax + 1; d < nd; ++d) {
        inner *= first.dim(d);
    }
    const std::int64_t total_axis = out_shape[static_cast<std::size_t>(ax)];
    Tensor out = TA::make(out_shape, first.dtype());
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    visit_dtype(first.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto o = out.mutable_data<T>();
        std::int64_t offset = 0;
        for (const auto& p : inputs) {
            auto src = p.data<T>();
            const std::int64_t width = p.dim(ax) * inner;
            for (std::int64_t r = 0; r < outer; ++r) {
                std::copy_n(src.data() + r * width, width, o.data() + r * total_axis * inner + offset);
            }
            offset += width;
        }
    });
    TA::record(out, inputs, [inputs, ax, outer, inner, total_axis](const Tensor& g) {
        visit_dtype(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.data<T>();
            std::int64_t offset = 0;
            for (const auto& p : inputs) {
                const std::int64_t width = p.dim(ax) * inner;
                if (auto d = TA::grad_buffer<T>(p); !d.empty()) {
                    for (std::int64_t r = 0; r < outer; ++r) {
                        const T* s = gd.data() + r * total_axis * inner + offset;
                        T* t = d.data() + r * width;
                        for (std::int64_t i = 0; i < width; ++i) {
                            t[i] += s[i];
                        }
                    }
                }
                offset += width;
            }
        });
    });
    return out;
}

Tensor index_select(const Tensor& x, std::span<const std::int64_t> indices) {
    if (x.ndim() < 1) {
        throw ShapeError("index_select: scalar operand");
    }
    const std::int64_t rows = x.dim(0);
    const std::int64_t width = rows == 0 ? 0 : x.numel() / rows;
    for (auto i : indices) {
        if (i < 0 || i >= rows) {
            throw ContractViolation("index_select: index " + std::to_string(i) + " out of range for shape " +
                                    to_string(x.shape()));
        }
    }
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<std::int64_t>(indices.size());
    Tensor out = TA::make(out_shape, x.dtype());
    std::vector<std::int64_t> idx(indices.begin(), indices.end());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto o = out.mutable_data<T>();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(src.data() + idx[r] * width, width, o.data() + static_cast<std::int64_t>(r) * width);
        }
    });
    TA::record(out, {x}, [x, idx = std::move(idx), width](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto d = TA::grad_buffer<T>(x);
            auto gd = g.data<T>();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                T* t = d.data() + idx[r] * width;
                const T* s = gd.data() + static_cast<std::int64_t>(r) * width;
                for (std::int64_t i = 0; i < width; ++i) {
                    t[i] += s[i];
                }
            }
        });
    });
    return out;
}

Tensor mean(const Tensor& x, int axis) {
    const int nd = x.ndim();
    const int ax = axis < 0 ? axis + nd : axis;
    if (ax < 0 || ax >= nd) {
        throw ShapeError("mean: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
    }
    const std::int64_t len = x.dim(ax);
    if (len == 0) {
        throw ShapeError("mean: empty axis in " + to_string(x.shape()));
    }
    std::int64_t outer = 1;
    for (int d = 0; d < ax; ++d) {
        outer *= x.dim(d);
    }
    std::int64_t inner = 1;
    for (int d = ax + 1; d < nd; ++d) {
        inner *= x.dim(d);
    }
    Shape out_shape;
    for (int d = 0; d < nd; ++d) {
        if (d != ax) {
            out_shape.push_back(x.dim(d));
        }
    }
    Tensor out = TA::make(out_shape, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = x.data<T>();
        auto o = out.mutable_data<T>();
        for (std::int64_t r = 0; r < outer; ++r) {
            for (std::int64_t i = 0; i < inner; ++i) {
                double acc = 0.0;
                for (std::int64_t a = 0; a < len; ++a) {
                    acc += static_cast<double>(src[(r * len + a) * inner + i]);
                }
                o[r * inner + i] = static_cast<T>(acc / static_cast<double>(len));
            }
        }
    });
    TA::record(out, {x}, [x, outer, inner, len](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto d = TA::grad_buffer<T>(x);
            auto gd = g.data<T>();
            const T inv = T(1) / static_cast<T>(len);
            for (std::int64_t r = 0; r < outer; ++r) {
                for (std::int64_t a = 0; a < len; ++a) {
                    for (std::int64_t i = 0; i < inner; ++i) {
                        d[(r * len + a) * inner + i] += gd[r * inner + i] * inv;
                    }
                }
            }
        });
    });
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = TA::make({}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0.0;
        for (T v : x.data<T>()) {
            acc += static_cast<double>(v);
        }
        out.mutable_data<T>()[0] = static_cast<T>(acc);
    });
    TA::record(out, {x}, [x](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto d = TA::grad_buffer<T>(x);
            const T gv = g.data<T>()[0];
            for (auto& v : d) {
                v += gv;
            }
        });
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    if (x.numel() == 0) {
        throw ShapeError("mean_all: empty tensor " + to_string(x.shape()));
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::int64_t d = last_dim(x, "layer_norm");
    require_same_dtype(x, gain, "layer_norm");
    require_same_dtype(x, bias, "layer_norm");
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                         " do not match " + to_string(x.shape()));
    }
    const std::int64_t rows = d == 0 ? 0 : x.numel() / d;
    Tensor out = TA::make(x.shape(), x.dtype());
    Tensor xhat = TA::make(x.shape(), x.dtype());
    Tensor rstd = TA::make({rows}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto gv = gain.data<T>();
        auto bv = bias.data<T>();
        auto o = out.mutable_data<T>();
        auto xh = xhat.mutable_data<T>();
        auto rs = rstd.mutable_data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = in.data() + r * d;
            double mu = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                mu += row[j];
            }
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double c = row[j] - mu;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            rs[r] = static_cast<T>(inv);
            for (std::int64_t j = 0; j < d; ++j) {
                const T h = static_cast<T>((row[j] - mu) * inv);
                xh[r * d + j] = h;
                o[r * d + j] = h * gv[j] + bv[j];
            }
        }
    });
    TA::record(out, {x, gain, bias}, [x, gain, bias, xhat, rstd, rows, d](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.data<T>();
            auto xh = xhat.data<T>();
            auto rs = rstd.data<T>();
            auto gv = gain.data<T>();
            if (auto dg = TA::grad_buffer<T>(gain); !dg.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        dg[j] += gd[r * d + j] * xh[r * d + j];
                    }
                }
            }
            if (auto db = TA::grad_buffer<T>(bias); !db.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        db[j] += gd[r * d + j];
                    }
                }
            }
            if (auto dx = TA::grad_buffer<T>(x); !dx.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = static_cast<double>(gd[r * d + j]) * gv[j];
                        m1 += dh;
                        m2 += dh * xh[r * d + j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = static_cast<double>(gd[r * d + j]) * gv[j];
                        dx[r * d + j] += static_cast<T>(rs[r] * (dh - m1 - xh[r * d + j] * m2));
                    }
                }
            }
        });
    });
    return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_ndim(x, 2, "batch_norm");
    require_same_dtype(x, gain, "batch_norm");
    require_same_dtype(x, bias, "batch_norm");
    const std::int64_t n = x.dim(0);
    const std::int64_t m = x.dim(1);
    if (gain.numel() != m || bias.numel() != m) {
        throw ShapeError("batch_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                         " do not match " + to_string(x.shape()));
    }
    if (n < 2) {
        throw ContractViolation("batch_norm: needs at least 2 rows, got " + to_string(x.shape()));
    }
    Tensor out = TA::make(x.shape(), x.dtype());
    Tensor xhat = TA::make(x.shape(), x.dtype());
    Tensor rstd = TA::make({m}, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto gv = gain.data<T>();
        auto bv = bias.data<T>();
        auto o = out.mutable_data<T>();
        auto xh = xhat.mutable_data<T>();
        auto rs = rstd.mutable_data<T>();
        std::vector<double> mu(static_cast<std::size_t>(m), 0.0);
        std::vector<double> var(static_cast<std::size_t>(m), 0.0);
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t j = 0; j < m; ++j) {
                mu[j] += in[r * m + j];
            }
        }
        for (auto& v : mu) {
            v /= static_cast<double>(n);
        }
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t j = 0; j < m; ++j) {
                const double c = in[r * m + j] - mu[j];
                var[j] += c * c;
            }
        }
        for (std::int64_t j = 0; j < m; ++j) {
            rs[j] = static_cast<T>(1.0 / std::sqrt(var[j] / static_cast<double>(n) + eps));
        }
        for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t j = 0; j < m; ++j) {
                const T h = static_cast<T>((in[r * m + j] - mu[j]) * static_cast<double>(rs[j]));
                xh[r * m + j] = h;
                o[r * m + j] = h * gv[j] + bv[j];
            }
        }
    });
    TA::record(out, {x, gain, bias}, [x, gain, bias, xhat, rstd, n, m](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.data<T>();
            auto xh = xhat.data<T>();
            auto rs = rstd.data<T>();
            auto gv = gain.data<T>();
            std::vector<double> sum_g(static_cast<std::size_t>(m), 0.0);
            std::vector<double> sum_gx(static_cast<std::size_t>(m), 0.0);
            for (std::int64_t r = 0; r < n; ++r) {
                for (std::int64_t j = 0; j < m; ++j) {
                    sum_g[j] += gd[r * m + j];
                    sum_gx[j] += static_cast<double>(gd[r * m + j]) * xh[r * m + j];
                }
            }
            if (auto dg = TA::grad_buffer<T>(gain); !dg.empty()) {
                for (std::int64_t j = 0; j < m; ++j) {
                    dg[j] += static_cast<T>(sum_gx[j]);
                }
            }
            if (auto db = TA::grad_buffer<T>(bias); !db.empty()) {
                for (std::int64_t j = 0; j < m; ++j) {
                    db[j] += static_cast<T>(sum_g[j]);
                }
            }
            if (auto dx = TA::grad_buffer<T>(x); !dx.empty()) {
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::int64_t r = 0; r < n; ++r) {
                    for (std::int64_t j = 0; j < m; ++j) {
                        const double dh = static_cast<double>(gd[r * m + j]) * gv[j];
                        const double mean_dh = sum_g[j] * gv[j] * inv_n;
                        const double mean_dhx = sum_gx[j] * gv[j] * inv_n;
                        dx[r * m + j] += static_cast<T>(rs[j] * (dh - mean_dh - xh[r * m + j] * mean_dhx));
                    }
                }
            }
        });
    });
    return out;
}

namespace {

template <class Fwd, class Deriv>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Deriv deriv) {
    Tensor out = TA::make(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] = static_cast<T>(fwd(static_cast<double>(in[i])));
        }
    });
    TA::record(out, {x}, [x, deriv](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto d = TA::grad_buffer<T>(x);
            auto in = x.data<T>();
            auto gd = g.data<T>();
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += static_cast<T>(gd[i] * deriv(static_cast<double>(in[i])));
            }
        });
    });
    return out;
}

} // namespace

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary_elementwise(
        x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const std::int64_t d = last_dim(x, "l2_normalize");
    const std::int64_t rows = d == 0 ? 0 : x.numel() / d;
    Tensor out = TA::make(x.shape(), x.dtype());
    Tensor norms = TA::make({rows}, DType::f64);
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        auto nv = norms.mutable_data<double>();
        for (std::int64_t r = 0; r < rows; ++r) {
            double ss = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                ss += static_cast<double>(in[r * d + j]) * in[r * d + j];
            }
            const double nrm = std::max(std::sqrt(ss), eps);
            nv[r] = nrm;
            for (std::int64_t j = 0; j < d; ++j) {
                o[r * d + j] = static_cast<T>(in[r * d + j] / nrm);
            }
        }
    });
    TA::record(out, {x}, [x, out_values = out.detach(), norms, rows, d, eps](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dx = TA::grad_buffer<T>(x);
            auto gd = g.data<T>();
            auto y = out_values.data<T>();
            auto nv = norms.data<double>();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double nrm = nv[r];
                if (nrm > eps) {
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        dot += static_cast<double>(gd[r * d + j]) * y[r * d + j];
                    }
                    for (std::int64_t j = 0; j < d; ++j) {
                        dx[r * d + j] += static_cast<T>((gd[r * d + j] - y[r * d + j] * dot) / nrm);
                    }
                } else {
                    for (std::int64_t j = 0; j < d; ++j) {
                        dx[r * d + j] += static_cast<T>(gd[r * d + j] / nrm);
                    }
                }
            }
        });
    });
    return out;
}

Tensor softmax_t(const Tensor& x, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("softmax_t: temperature must be positive and finite, got " + std::to_string(temperature));
    }
    const std::int64_t k = last_dim(x, "softmax_t");
    const std::int64_t rows = k == 0 ? 0 : x.numel() / k;
    Tensor out = TA::make(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        const T tau = static_cast<T>(temperature);
        parallel_for(rows, 64, [&](std::int64_t begin, std::int64_t end) {
            std::vector<double> e(static_cast<std::size_t>(k));
            for (std::int64_t r = begin; r < end; ++r) {
                const T* row = in.data() + r * k;
                // Scale in the tensor's own precision so that
                // softmax_t(x, t) and softmax_t(x / t, 1) agree bitwise.
                for (std::int64_t j = 0; j < k; ++j) {
                    e[j] = static_cast<double>(row[j] / tau);
                }
                const double mx = *std::max_element(e.begin(), e.end());
                double z = 0.0;
                for (std::int64_t j = 0; j < k; ++j) {
                    e[j] = std::exp(e[j] - mx);
                    z += e[j];
                }
                for (std::int64_t j = 0; j < k; ++j) {
                    o[r * k + j] = static_cast<T>(e[j] / z);
                }
            }
        });
    });
    TA::record(out, {x}, [x, y_values = out.detach(), rows, k, temperature](const Tensor& g) {
        visit_dtype(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dx = TA::grad_buffer<T>(x);
            auto gd = g.data<T>();
            auto y = y_values.data<T>();
            const double inv_t = 1.0 / temperature;
            for (std::int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < k; ++j) {
                    dot += static_cast<double>(gd[r * k + j]) * y[r * k + j];
                }
                for (std::int64_t j = 0; j < k; ++j) {
                    dx[r * k + j] += static_cast<T>(y[r * k + j] * (gd[r * k + j] - dot) * inv_t);
                }
            }
        });
    });
    return out;
}

namespace {

template <class T>
void require_distribution_rows(std::span<const T> v, std::int64_t rows, std::int64_t k, const char* which) {
    for (std::int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        bool nan_row = false;
        for (std::int64_t j = 0; j < k; ++j) {
            const T value = v[r * k + j];
            if (std::isnan(value)) {
                // Propagates to the loss; the caller reports the numerical failure.
                nan_row = true;
                continue;
            }
            if (value < T(0)) {
                throw ContractViolation(std::string("cross_entropy: ") + which + " row " + std::to_string(r) +
                                        " has a negative entry");
            }
            s += static_cast<double>(value);
        }
        if (!nan_row && std::abs(s - 1.0) > 1e-5) {
            throw ContractViolation(std::string("cross_entropy: ") + which + " row " + std::to_string(r) +
                                    " sums to " + std::to_string(s) + ", not 1");
        }
    }
}

} // namespace

Tensor cross_entropy(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "cross_entropy");
    const std::int64_t k = last_dim(pred, "cross_entropy");
    const std::int64_t rows = k == 0 ? 0 : pred.numel() / k;
    Shape out_shape(pred.shape().begin(), pred.shape().end() - 1);
    Tensor out = TA::make(out_shape, pred.dtype());
    visit_dtype(pred.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto a = pred.data<T>();
        auto b = target.data<T>();
        require_distribution_rows<T>(a, rows, k, "prediction");
        require_distribution_rows<T>(b, rows, k, "target");
        auto o = out.mutable_data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
            double ce = 0.0;
            for (std::int64_t j = 0; j < k; ++j) {
                const double bj = b[r * k + j];
                if (bj != 0.0) {
                    ce -= bj * std::log(std::max(static_cast<double>(a[r * k + j]), kLogClamp));
                }
            }
            o[r] = static_cast<T>(ce);
        }
    });
    TA::record(out, {pred, target}, [pred, target, rows, k](const Tensor& g) {
        visit_dtype(pred.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gd = g.data<T>();
            auto a = pred.data<T>();
            auto b = target.data<T>();
            if (auto da = TA::grad_buffer<T>(pred); !da.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < k; ++j) {
                        const double aj = a[r * k + j];
                        if (aj > kLogClamp) {
                            da[r * k + j] -= static_cast<T>(gd[r] * b[r * k + j] / aj);
                        }
                    }
                }
            }
            if (auto db = TA::grad_buffer<T>(target); !db.empty()) {
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < k; ++j) {
                        db[r * k + j] -= static_cast<T>(
                            gd[r] * std::log(std::max(static_cast<double>(a[r * k + j]), kLogClamp)));
                    }
                }
            }
        });
    });
    return out;
}

Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b) {
    require_ndim(a, 2, "cosine_sim_matrix");
    require_ndim(b, 2, "cosine_sim_matrix");
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("cosine_sim_matrix: feature widths differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    return matmul(l2_normalize(a), l2_normalize(b), /*transpose_b=*/true);
}

Tensor multi_head_attention(const Tensor& qkv, std::int64_t batch, std::int64_t heads) {
    require_ndim(qkv, 2, "multi_head_attention");
    if (batch <= 0 || heads <= 0 || qkv.dim(0) % batch != 0 || qkv.dim(1) % (3 * heads) != 0) {
        throw ShapeError("multi_head_attention: qkv " + to_string(qkv.shape()) + " incompatible with batch " +
                         std::to_string(batch) + " and " + std::to_string(heads) + " heads");
    }
    const std::int64_t len = qkv.dim(0) / batch;
    const std::int64_t d = qkv.dim(1) / 3;
    const std::int64_t dh = d / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out = TA::make({batch * len, d}, qkv.dtype());
    // Attention probabilities per (sequence, head), kept for backward.
    Tensor probs = TA::make({batch * heads, len, len}, qkv.dtype());

    visit_dtype(qkv.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = qkv.data<T>();
        auto o = out.mutable_data<T>();
        auto pr = probs.mutable_data<T>();
        parallel_for(batch * heads, 1, [&](std::int64_t begin, std::int64_t end) {
            std::vector<T> q(static_cast<std::size_t>(len * dh));
            std::vector<T> kt(static_cast<std::size_t>(dh * len));
            std::vector<T> v(static_cast<std::size_t>(len * dh));
            std::vector<T> res(static_cast<std::size_t>(len * dh));
            for (std::int64_t bh = begin; bh < end; ++bh) {
                const std::int64_t b = bh / heads;
                const std::int64_t h = bh % heads;
                for (std::int64_t i = 0; i < len; ++i) {
                    const T* row = in.data() + (b * len + i) * 3 * d;
                    for (std::int64_t c = 0; c < dh; ++c) {
                        q[i * dh + c] = row[h * dh + c];
                        kt[c * len + i] = row[d + h * dh + c];
                        v[i * dh + c] = row[2 * d + h * dh + c];
                    }
                }
                T* p = pr.data() + bh * len * len;
                std::fill(p, p + len * len, T(0));
                gemm::gemm_nn<T>(q.data(), kt.data(), p, len, dh, len);
                for (std::int64_t i = 0; i < len; ++i) {
                    T* srow = p + i * len;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::int64_t j = 0; j < len; ++j) {
                        mx = std::max(mx, static_cast<double>(srow[j]) * scale_factor);
                    }
                    double z = 0.0;
                    for (std::int64_t j = 0; j < len; ++j) {
                        const double e = std::exp(static_cast<double>(srow[j]) * scale_factor - mx);
                        srow[j] = static_cast<T>(e);
                        z += e;
                    }
                    for (std::int64_t j = 0; j < len; ++j) {
                        srow[j] = static_cast<T>(srow[j] / z);
                    }
                }
                std::fill(res.begin(), res.end(), T(0));
                gemm::gemm_nn<T>(p, v.data(), res.data(), len, len, dh);
                for (std::int64_t i = 0; i < len; ++i) {
                    std::copy_n(res.data() + i * dh, dh, o.data() + (b * len + i) * d + h * dh);
                }
            }
        });
    });

    TA::record(out, {qkv}, [qkv, probs, batch, heads, len, d, dh, scale_factor](const Tensor& g) {
        visit_dtype(qkv.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto dqkv = TA::grad_buffer<T>(qkv);
            auto in = qkv.data<T>();
            auto gd = g.data<T>();
            auto pr = probs.data<T>();
            parallel_for(batch * heads, 1, [&](std::int64_t begin, std::int64_t end) {
                std::vector<T> q(static_cast<std::size_t>(len * dh));
                std::vector<T> k(static_cast<std::size_t>(len * dh));
                std::vector<T> vt(static_cast<std::size_t>(dh * len));
                std::vector<T> go(static_cast<std::size_t>(len * dh));
                std::vector<T> dp(static_cast<std::size_t>(len * len));
                std::vector<T> dq(static_cast<std::size_t>(len * dh));
                std::vector<T> dk(static_cast<std::size_t>(len * dh));
                std::vector<T> dv(static_cast<std::size_t>(len * dh));
                for (std::int64_t bh = begin; bh < end; ++bh) {
                    const std::int64_t b = bh / heads;
                    const std::int64_t h = bh % heads;
                    for (std::int64_t i = 0; i < len; ++i) {
                        const T* row = in.data() + (b * len + i) * 3 * d;
                        const T* grow = gd.data() + (b * len + i) * d;
                        for (std::int64_t c = 0; c < dh; ++c) {
                            q[i * dh + c] = row[h * dh + c];
                            k[i * dh + c] = row[d + h * dh + c];
                            vt[c * len + i] = row[2 * d + h * dh + c];
                            go[i * dh + c] = grow[h * dh + c];
                        }
                    }
                    const T* p = pr.data() + bh * len * len;
                    // dV = P^T . dO
                    std::fill(dv.begin(), dv.end(), T(0));
                    gemm::gemm_tn<T>(p, go.data(), dv.data(), len, len, dh);
                    // dP = dO . V^T
                    std::fill(dp.begin(), dp.end(), T(0));
                    gemm::gemm_nn<T>(go.data(), vt.data(), dp.data(), len, dh, len);
                    // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(dh) scale.
                    for (std::int64_t i = 0; i < len; ++i) {
                        double dot = 0.0;
                        for (std::int64_t j = 0; j < len; ++j) {
                            dot += static_cast<double>(dp[i * len + j]) * p[i * len + j];
                        }
                        for (std::int64_t j = 0; j < len; ++j) {
                            dp[i * len + j] =
                                static_cast<T>(p[i * len + j] * (dp[i * len + j] - dot) * scale_factor);
                        }
                    }
                    // dQ = dS . K, dK = dS^T . Q
                    std::fill(dq.begin(), dq.end(), T(0));
                    gemm::gemm_nn<T>(dp.data(), k.data(), dq.data(), len, len, dh);
                    std::fill(dk.begin(), dk.end(), T(0));
                    gemm::gemm_tn<T>(dp.data(), q.data(), dk.data(), len, len, dh);
                    for (std::int64_t i = 0; i < len; ++i) {
                        T* drow = dqkv.data() + (b * len + i) * 3 * d;
                        for (std::int64_t c = 0; c < dh; ++c) {
                            drow[h * dh + c] += dq[i * dh + c];
                            drow[d + h * dh + c] += dk[i * dh + c];
                            drow[2 * d + h * dh + c] += dv[i * dh + c];
                        }
                    }
                }
            });
        });
    });
    return out;
}

} // namespace moca
