// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "stg/numerics/kernels.hpp"

namespace stg::num {

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + why);
}

template <typename T>
void require_matrix(const char* op, const Var<T>& v) {
    if (v.shape().size() != 2) shape_fail(op, v.shape(), "is not a matrix");
}

template <typename T>
void require_same(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

}  // namespace

// --- Tape -------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::push_node(Node node) {
    if (!node.value.all_finite()) {
        throw NumericalError(std::string("non-finite value produced by op '") + node.op + "'");
    }
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push_node(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>{this, it->second};
    Node n;
    n.op = "param";
    n.value = p.value;
    if (recording() && !frozen_.contains(&p)) {
        n.requires_grad = true;
        n.param = &p;
    }
    Var<T> v = push_node(std::move(n));
    bound_.emplace(&p, v.id);
    return v;
}

template <typename T>
void Tape<T>::freeze(const ParameterSet<T>& set) {
    for (const auto& p : set) frozen_.insert(p.get());
}

template <typename T>
Var<T> Tape<T>::push(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                     BackwardFn fn) {
    return push(op, std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::push(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                     BackwardFn fn) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    if (recording()) {
        for (const auto& in : inputs) {
            if (in.tape != this) throw std::logic_error(std::string(op) + ": mixing tapes");
            n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
        }
        if (n.requires_grad) n.backward = std::move(fn);
    }
    return push_node(std::move(n));
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.shape != n.value.shape) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.shape == n.value.shape) return n.grad;
    return Tensor<T>(n.value.shape);
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
    if (!recording()) throw std::logic_error("backward on an inference tape");
    if (loss.tape != this) throw std::logic_error("backward: loss belongs to another tape");
    const Tensor<T>& lv = nodes_[loss.id].value;
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv.shape));
    if (!std::isfinite(static_cast<double>(lv[0]))) {
        throw NumericalError(std::string("backward: non-finite loss from op '") +
                             nodes_[loss.id].op + "'");
    }
    if (!nodes_[loss.id].requires_grad) {
        // Nothing trainable reached; still flag bound parameters.
        for (auto& n : nodes_)
            if (n.param) n.param->grad_ready = true;
        return;
    }
    grad_buffer(loss.id).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.shape != n.value.shape) {
            if (n.param) n.param->grad_ready = true;
            continue;
        }
        if (!n.grad.all_finite()) {
            throw NumericalError(std::string("non-finite gradient flowing into op '") + n.op + "'");
        }
        if (n.backward) n.backward(*this, i);
        if (n.param) {
            auto& pg = n.param->grad.data;
            for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad.data[j];
            n.param->grad_ready = true;
        }
    }
}

// --- ops --------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) shape_fail("matmul", a.shape(), b.shape());
    Tensor<T> out(Shape{m, n});
    kernels::gemm(false, false, m, n, k, a.value().data.data(), b.value().data.data(),
                  out.data.data(), false);
    return a.tape->push("matmul", std::move(out), {a, b}, [a, b, m, n, k](Tape<T>& t, std::size_t self) {
        const T* dc = t.grad_buffer(self).data.data();
        if (t.requires_grad(a.id))
            kernels::gemm(false, true, m, k, n, dc, t.value(b.id).data.data(),
                          t.grad_buffer(a.id).data.data(), true);
        if (t.requires_grad(b.id))
            kernels::gemm(true, false, k, n, m, t.value(a.id).data.data(), dc,
                          t.grad_buffer(b.id).data.data(), true);
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same("add", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape->push("add", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        for (auto id : {a.id, b.id}) {
            if (!t.requires_grad(id)) continue;
            auto& d = t.grad_buffer(id).data;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same("sub", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape->push("sub", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(a.id)) {
            auto& d = t.grad_buffer(a.id).data;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
        if (t.requires_grad(b.id)) {
            auto& d = t.grad_buffer(b.id).data;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same("mul", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.tape->push("mul", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(a.id)) {
            const auto& bv = t.value(b.id).data;
            auto& d = t.grad_buffer(a.id).data;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b.id)) {
            const auto& av = t.value(a.id).data;
            auto& d = t.grad_buffer(b.id).data;
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& x : out.data) x *= factor;
    return a.tape->push("scale", std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
    });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T offset) {
    Tensor<T> out = a.value();
    for (auto& x : out.data) x += offset;
    return a.tape->push("add_scalar", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

template <typename T>
Var<T> add_rows(Var<T> x, Var<T> table) {
    require_matrix("add_rows", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    // A rank-1 table is a single row.
    const auto& ts = table.shape();
    const std::size_t trows = ts.size() == 1 ? 1 : ts.size() == 2 ? ts[0] : 0;
    const std::size_t tcols = ts.size() == 1 ? ts[0] : ts.size() == 2 ? ts[1] : 0;
    if (trows == 0 || tcols != cols || rows % trows != 0)
        shape_fail("add_rows", x.shape(), table.shape());
    Tensor<T> out = x.value();
    const auto& tv = table.value().data;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += tv[(r % trows) * cols + c];
    return x.tape->push("add_rows", std::move(out), {x, table},
                        [x, table, rows, cols, trows](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad_buffer(self).data;
                            if (t.requires_grad(x.id)) {
                                auto& d = t.grad_buffer(x.id).data;
                                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                            }
                            if (t.requires_grad(table.id)) {
                                auto& d = t.grad_buffer(table.id).data;
                                for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < cols; ++c)
                                        d[(r % trows) * cols + c] += g[r * cols + c];
                            }
                        });
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tensor<T> out = a.value();
    for (auto& x : out.data) x = x > T(0) ? x : T(0);
    return a.tape->push("relu", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& av = t.value(a.id).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > T(0)) d[i] += g[i];
    });
}

template <typename T>
Var<T> gelu(Var<T> a) {
    // tanh approximation
    constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k3 = static_cast<T>(0.044715);
    Tensor<T> out = a.value();
    for (auto& x : out.data) x = T(0.5) * x * (T(1) + std::tanh(c * (x + k3 * x * x * x)));
    return a.tape->push("gelu", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& av = t.value(a.id).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = av[i];
            const T th = std::tanh(c * (x + k3 * x * x * x));
            const T dth = (T(1) - th * th) * c * (T(1) + T(3) * k3 * x * x);
            d[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * dth);
        }
    });
}

template <typename T>
Var<T> exp(Var<T> a) {
    Tensor<T> out = a.value();
    for (auto& x : out.data) x = std::exp(x);
    return a.tape->push("exp", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& y = t.value(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i];
    });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
    const std::size_t rows = a.value().rows(), cols = a.value().cols();
    Tensor<T> out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.data.data() + r * cols;
        const T mx = *std::max_element(row, row + cols);
        T total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += (row[c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
    }
    return a.tape->push("softmax_rows", std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& y = t.value(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                d[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
    });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
    const std::size_t rows = a.value().rows(), cols = a.value().cols();
    Tensor<T> out = a.value();
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.data.data() + r * cols;
        const T mx = *std::max_element(row, row + cols);
        T total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - mx);
        const T lse = mx + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) row[c] -= lse;
    }
    return a.tape->push("log_softmax_rows", std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& y = t.value(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t r = 0; r < rows; ++r) {
            T gsum = 0;
            for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c)
                d[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    require_matrix("layer_norm", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (gain.value().size() != cols) shape_fail("layer_norm", x.shape(), gain.shape());
    if (bias.value().size() != cols) shape_fail("layer_norm", x.shape(), bias.shape());
    auto xhat = std::make_shared<std::vector<T>>(rows * cols);
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    Tensor<T> out(x.shape());
    const auto& xv = x.value().data;
    const auto& gv = gain.value().data;
    const auto& bv = bias.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        T mu = 0;
        for (std::size_t c = 0; c < cols; ++c) mu += xv[r * cols + c];
        mu /= static_cast<T>(cols);
        T var = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const T dlt = xv[r * cols + c] - mu;
            var += dlt * dlt;
        }
        var /= static_cast<T>(cols);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            const T xh = (xv[r * cols + c] - mu) * is;
            (*xhat)[r * cols + c] = xh;
            out[r * cols + c] = xh * gv[c] + bv[c];
        }
    }
    return x.tape->push(
        "layer_norm", std::move(out), {x, gain, bias},
        [x, gain, bias, rows, cols, xhat, inv_std](Tape<T>& t, std::size_t self) {
            const auto& g = t.grad_buffer(self).data;
            const auto& gv = t.value(gain.id).data;
            if (t.requires_grad(gain.id)) {
                auto& d = t.grad_buffer(gain.id).data;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                        d[c] += g[r * cols + c] * (*xhat)[r * cols + c];
            }
            if (t.requires_grad(bias.id)) {
                auto& d = t.grad_buffer(bias.id).data;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) d[c] += g[r * cols + c];
            }
            if (t.requires_grad(x.id)) {
                auto& d = t.grad_buffer(x.id).data;
                const T n = static_cast<T>(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    T mean_dxh = 0, mean_dxh_xh = 0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T dxh = g[r * cols + c] * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * (*xhat)[r * cols + c];
                    }
                    mean_dxh /= n;
                    mean_dxh_xh /= n;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T dxh = g[r * cols + c] * gv[c];
                        d[r * cols + c] += (*inv_std)[r] *
                                           (dxh - mean_dxh - (*xhat)[r * cols + c] * mean_dxh_xh);
                    }
                }
            }
        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3])
        shape_fail("conv2d", xs, ws);
    if (bias.value().size() != ws[0]) shape_fail("conv2d", ws, bias.shape());
    kernels::ConvGeometry g;
    g.batch = xs[0];
    g.in_channels = xs[1];
    g.height = xs[2];
    g.width = xs[3];
    g.out_channels = ws[0];
    g.kernel = ws[2];
    g.stride = stride;
    g.padding = padding;
    if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel)
        shape_fail("conv2d", xs, ws);
    Tensor<T> out(Shape{g.batch, g.out_channels, g.out_height(), g.out_width()});
    kernels::conv2d_forward(g, x.value().data.data(), weight.value().data.data(),
                            bias.value().data.data(), out.data.data());
    return x.tape->push("conv2d", std::move(out), {x, weight, bias},
                        [x, weight, bias, g](Tape<T>& t, std::size_t self) {
                            T* dx = t.requires_grad(x.id) ? t.grad_buffer(x.id).data.data() : nullptr;
                            T* dw = t.requires_grad(weight.id) ? t.grad_buffer(weight.id).data.data()
                                                               : nullptr;
                            T* db = t.requires_grad(bias.id) ? t.grad_buffer(bias.id).data.data()
                                                             : nullptr;
                            kernels::conv2d_backward(g, t.value(x.id).data.data(),
                                                     t.value(weight.id).data.data(),
                                                     t.grad_buffer(self).data.data(), dx, dw, db);
                        });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    if (shape_numel(shape) != a.value().size()) shape_fail("reshape", a.shape(), shape);
    Tensor<T> out(std::move(shape), a.value().data);
    return a.tape->push("reshape", std::move(out), {a}, [a](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
    require_matrix("concat_cols", a);
    require_matrix("concat_cols", b);
    const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    if (b.shape()[0] != rows) shape_fail("concat_cols", a.shape(), b.shape());
    Tensor<T> out(Shape{rows, ca + cb});
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.begin() + r * ca, ca, out.data.begin() + r * (ca + cb));
        std::copy_n(bv.begin() + r * cb, cb, out.data.begin() + r * (ca + cb) + ca);
    }
    return a.tape->push("concat_cols", std::move(out), {a, b}, [a, b, rows, ca, cb](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        if (t.requires_grad(a.id)) {
            auto& d = t.grad_buffer(a.id).data;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += g[r * (ca + cb) + c];
        }
        if (t.requires_grad(b.id)) {
            auto& d = t.grad_buffer(b.id).data;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += g[r * (ca + cb) + ca + c];
        }
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t cols = parts[0].value().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != cols) shape_fail("concat_rows", parts[0].shape(), p.shape());
        rows += p.value().rows();
    }
    Tensor<T> out(Shape{rows, cols});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + offset);
        offset += p.value().size();
    }
    std::vector<Var<T>> ins(parts);
    return parts[0].tape->push("concat_rows", std::move(out), ins, [ins](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        std::size_t offset = 0;
        for (const auto& p : ins) {
            const std::size_t n = t.value(p.id).size();
            if (t.requires_grad(p.id)) {
                auto& d = t.grad_buffer(p.id).data;
                for (std::size_t i = 0; i < n; ++i) d[i] += g[offset + i];
            }
            offset += n;
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
    const std::size_t rows = a.value().rows(), cols = a.value().cols();
    if (begin >= end || end > rows)
        shape_fail("slice_rows", a.shape(),
                   "cannot take rows [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
    Shape s = a.shape();
    s[0] = end - begin;
    Tensor<T> out(std::move(s), std::vector<T>(a.value().data.begin() + begin * cols,
                                               a.value().data.begin() + end * cols));
    return a.tape->push("slice_rows", std::move(out), {a}, [a, begin, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) d[begin * cols + i] += g[i];
    });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
    require_matrix("slice_cols", a);
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    if (begin >= end || end > cols)
        shape_fail("slice_cols", a.shape(),
                   "cannot take cols [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
    const std::size_t w = end - begin;
    Tensor<T> out(Shape{rows, w});
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(a.value().data.begin() + r * cols + begin, w, out.data.begin() + r * w);
    return a.tape->push("slice_cols", std::move(out), {a}, [a, rows, cols, begin, w](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) d[r * cols + begin + c] += g[r * w + c];
    });
}

template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows) {
    const std::size_t n = a.value().rows(), cols = a.value().cols();
    Shape s = a.shape();
    s[0] = rows.size();
    if (rows.empty()) shape_fail("gather_rows", a.shape(), "gathered with no indices");
    Tensor<T> out(std::move(s));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= n) shape_fail("gather_rows", a.shape(), "has no row " + std::to_string(rows[i]));
        std::copy_n(a.value().data.begin() + rows[i] * cols, cols, out.data.begin() + i * cols);
    }
    return a.tape->push("gather_rows", std::move(out), {a}, [a, rows, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t c = 0; c < cols; ++c) d[rows[i] * cols + c] += g[i * cols + c];
    });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq, std::size_t heads, bool causal) {
    require_matrix("attention", q);
    require_same("attention", q, k);
    require_same("attention", q, v);
    const std::size_t rows = q.shape()[0], d = q.shape()[1];
    if (seq == 0 || rows % seq != 0) shape_fail("attention", q.shape(), "is not a whole number of sequences");
    if (heads == 0 || d % heads != 0) shape_fail("attention", q.shape(), "is not divisible into heads");
    const std::size_t groups = rows / seq;
    auto probs = std::make_shared<std::vector<T>>(groups * heads * seq * seq);
    Tensor<T> out(q.shape());
    kernels::attention_forward(groups, seq, heads, d, causal, q.value().data.data(),
                               k.value().data.data(), v.value().data.data(), probs->data(),
                               out.data.data());
    return q.tape->push("attention", std::move(out), {q, k, v},
                        [q, k, v, groups, seq, heads, d, causal, probs](Tape<T>& t, std::size_t self) {
                            std::vector<T> dq(groups * seq * d), dk(dq.size()), dv(dq.size());
                            kernels::attention_backward(
                                groups, seq, heads, d, causal, t.value(q.id).data.data(),
                                t.value(k.id).data.data(), t.value(v.id).data.data(), probs->data(),
                                t.grad_buffer(self).data.data(), dq.data(), dk.data(), dv.data());
                            const std::pair<std::size_t, const std::vector<T>*> parts[] = {
                                {q.id, &dq}, {k.id, &dk}, {v.id, &dv}};
                            for (const auto& [id, src] : parts) {
                                if (!t.requires_grad(id)) continue;
                                auto& dst = t.grad_buffer(id).data;
                                for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*src)[i];
                            }
                        });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t seq,
                            std::size_t heads, bool causal) {
    const std::size_t rows = q.rows(), d = q.cols();
    if (q.shape != k.shape || seq == 0 || rows % seq != 0 || d % heads != 0)
        throw ShapeError("attention_weights: bad shapes " + shape_str(q.shape) + " and " +
                         shape_str(k.shape));
    const std::size_t groups = rows / seq;
    Tensor<T> probs(Shape{groups, heads, seq, seq});
    std::vector<T> scratch(rows * d);
    kernels::attention_forward(groups, seq, heads, d, causal, q.data.data(), k.data.data(),
                               k.data.data(), probs.data.data(), scratch.data());
    return probs;
}

template <typename T>
Var<T> group_mean(Var<T> x, std::size_t seq) {
    require_matrix("group_mean", x);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (seq == 0 || rows % seq != 0) shape_fail("group_mean", x.shape(), "is not a whole number of groups");
    const std::size_t groups = rows / seq;
    Tensor<T> out(Shape{groups, cols});
    const auto& xv = x.value().data;
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t s = 0; s < seq; ++s)
            for (std::size_t c = 0; c < cols; ++c) out[g * cols + c] += xv[(g * seq + s) * cols + c];
    for (auto& o : out.data) o /= static_cast<T>(seq);
    return x.tape->push("group_mean", std::move(out), {x}, [x, groups, seq, cols](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(x.id).data;
        const T inv = T(1) / static_cast<T>(seq);
        for (std::size_t gi = 0; gi < groups; ++gi)
            for (std::size_t s = 0; s < seq; ++s)
                for (std::size_t c = 0; c < cols; ++c)
                    d[(gi * seq + s) * cols + c] += g[gi * cols + c] * inv;
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T acc = 0;
    for (T x : a.value().data) acc += x;
    return a.tape->push("sum", Tensor<T>::scalar(acc), {a}, [a](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self)[0];
        for (auto& d : t.grad_buffer(a.id).data) d += g;
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    T acc = 0;
    for (T x : a.value().data) acc += x;
    const T n = static_cast<T>(a.value().size());
    return a.tape->push("mean", Tensor<T>::scalar(acc / n), {a}, [a, n](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self)[0] / n;
        for (auto& d : t.grad_buffer(a.id).data) d += g;
    });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
    require_same("mse", a, b);
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    T acc = 0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
    const T n = static_cast<T>(av.size());
    return a.tape->push("mse", Tensor<T>::scalar(acc / n), {a, b}, [a, b, n](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buffer(self)[0] * T(2) / n;
        const auto& av = t.value(a.id).data;
        const auto& bv = t.value(b.id).data;
        if (t.requires_grad(a.id)) {
            auto& d = t.grad_buffer(a.id).data;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (av[i] - bv[i]);
        }
        if (t.requires_grad(b.id)) {
            auto& d = t.grad_buffer(b.id).data;
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g * (av[i] - bv[i]);
        }
    });
}

template <typename T>
Var<T> l2_norm(Var<T> a) {
    T acc = 0;
    for (T x : a.value().data) acc += x * x;
    const T norm = std::sqrt(acc);
    return a.tape->push("l2_norm", Tensor<T>::scalar(norm), {a}, [a, norm](Tape<T>& t, std::size_t self) {
        if (norm == T(0)) return;
        const T g = t.grad_buffer(self)[0] / norm;
        const auto& av = t.value(a.id).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * av[i];
    });
}

template <typename T>
Var<T> pick(Var<T> a, const std::vector<std::size_t>& cols) {
    require_matrix("pick", a);
    const std::size_t rows = a.shape()[0], width = a.shape()[1];
    if (cols.size() != rows) shape_fail("pick", a.shape(), "needs one index per row");
    Tensor<T> out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) {
        if (cols[r] >= width) shape_fail("pick", a.shape(), "has no column " + std::to_string(cols[r]));
        out[r] = a.value()[r * width + cols[r]];
    }
    return a.tape->push("pick", std::move(out), {a}, [a, cols, width](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t r = 0; r < cols.size(); ++r) d[r * width + cols[r]] += g[r];
    });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
    Tensor<T> out = a.value();
    for (auto& x : out.data) x = std::clamp(x, lo, hi);
    return a.tape->push("clamp", std::move(out), {a}, [a, lo, hi](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& av = t.value(a.id).data;
        auto& d = t.grad_buffer(a.id).data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] >= lo && av[i] <= hi) d[i] += g[i];
    });
}

template <typename T>
Var<T> minimum(Var<T> a, Var<T> b) {
    require_same("minimum", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(out[i], bv[i]);
    return a.tape->push("minimum", std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad_buffer(self).data;
        const auto& av = t.value(a.id).data;
        const auto& bv = t.value(b.id).data;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const bool take_a = av[i] <= bv[i];
            const std::size_t id = take_a ? a.id : b.id;
            if (t.requires_grad(id)) t.grad_buffer(id)[i] += g[i];
        }
    });
}

template <typename T>
Var<T> detach(Var<T> a) {
    return a.tape->constant(a.value());
}

#define STG_INSTANTIATE_AUTOGRAD(T)                                                              \
    template class Tape<T>;                                                                     \
    template Var<T> matmul(Var<T>, Var<T>);                                                     \
    template Var<T> add(Var<T>, Var<T>);                                                        \
    template Var<T> sub(Var<T>, Var<T>);                                                        \
    template Var<T> mul(Var<T>, Var<T>);                                                        \
    template Var<T> scale(Var<T>, T);                                                           \
    template Var<T> add_scalar(Var<T>, T);                                                      \
    template Var<T> add_rows(Var<T>, Var<T>);                                                   \
    template Var<T> relu(Var<T>);                                                               \
    template Var<T> gelu(Var<T>);                                                               \
    template Var<T> exp(Var<T>);                                                                \
    template Var<T> softmax_rows(Var<T>);                                                       \
    template Var<T> log_softmax_rows(Var<T>);                                                   \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                      \
    template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);                   \
    template Var<T> reshape(Var<T>, Shape);                                                     \
    template Var<T> concat_cols(Var<T>, Var<T>);                                                \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                                    \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                               \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                               \
    template Var<T> gather_rows(Var<T>, const std::vector<std::size_t>&);                       \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, bool);          \
    template Var<T> group_mean(Var<T>, std::size_t);                                            \
    template Var<T> sum(Var<T>);                                                                \
    template Var<T> mean(Var<T>);                                                               \
    template Var<T> mse(Var<T>, Var<T>);                                                        \
    template Var<T> l2_norm(Var<T>);                                                            \
    template Var<T> pick(Var<T>, const std::vector<std::size_t>&);                              \
    template Var<T> clamp(Var<T>, T, T);                                                        \
    template Var<T> minimum(Var<T>, Var<T>);                                                    \
    template Var<T> detach(Var<T>);                                                             \
    template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, std::size_t,       \
                                         std::size_t, bool);

STG_INSTANTIATE_AUTOGRAD(float)
STG_INSTANTIATE_AUTOGRAD(double)

}  // namespace stg::num
