#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/gemm.hpp"
#include "occlu/numerics/tensor.hpp"

namespace occlu {

namespace detail {

struct AxisSplit {
    std::size_t outer;
    std::size_t n;
    std::size_t inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
    return small.size() <= big.size() && std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Suffix broadcasting: the smaller operand must match the trailing dims of the larger
/// (or hold a single element).
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return a;
    if (numel(b) == 1) return a;
    if (numel(a) == 1) return b;
    if (is_suffix(b, a)) return a;
    if (is_suffix(a, b)) return b;
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
}

/// Visits (out, a, b) flat indices of a suffix-broadcast binary operation.
template <typename F>
void broadcast_for(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
    if (na == n && nb == n) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    } else if (na == n) {
        for (std::size_t o = 0; o < n; o += nb)
            for (std::size_t j = 0; j < nb; ++j) f(o + j, o + j, j);
    } else {
        for (std::size_t o = 0; o < n; o += na)
            for (std::size_t j = 0; j < na; ++j) f(o + j, j, o + j);
    }
}

template <std::floating_point T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db, const char* op) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    const std::size_t n = numel(out_shape), na = a.size(), nb = b.size();
    std::vector<T> out(n);
    const T* av = a.data().data();
    const T* bv = b.data().data();
    broadcast_for(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
    return make_result<T>(
        std::move(out_shape), std::move(out), {&a, &b},
        [n, na, nb, da, db](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const T* g = self.grad.data();
            const T* x = pa.value.data();
            const T* y = pb.value.data();
            if (pa.requires_grad) {
                T* ga = pa.grad.data();
                broadcast_for(n, na, nb,
                              [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * da(x[ia], y[ib]); });
            }
            if (pb.requires_grad) {
                T* gb = pb.grad.data();
                broadcast_for(n, na, nb,
                              [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * db(x[ia], y[ib]); });
            }
        },
        op);
}

/// Elementwise map; `df(x, y)` is dy/dx given input x and output y.
template <std::floating_point T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df, const char* op) {
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result<T>(
        x.shape(), std::move(out), {&x},
        [df](Node<T>& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
        },
        op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); }, "add");
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); }, "sub");
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; }, "mul");
}

template <std::floating_point T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; }, [](T x, T y) { return -x / (y * y); },
        "div");
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <std::floating_point T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); }, "add_scalar");
}

template <std::floating_point T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
}

template <std::floating_point T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <std::floating_point T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; }, "exp");
}

template <std::floating_point T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; }, "log");
}

template <std::floating_point T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; }, "square");
}

/// x^e for x >= 0.
template <std::floating_point T>
Tensor<T> pow_scalar(const Tensor<T>& x, T e) {
    return detail::unary(
        x, [e](T v) { return e == T(0) ? T(1) : std::pow(v, e); },
        [e](T v, T) {
            if (e == T(0)) return T(0);
            if (e == T(1)) return T(1);
            if (v == T(0)) return T(0);
            return e * std::pow(v, e - T(1));
        },
        "pow_scalar");
}

/// Clamp into [lo, hi]; the gradient is zero strictly outside the interval.
template <std::floating_point T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary(
        x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); }, "clamp");
}

/// GELU, tanh approximation.
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = T(0.044715);
    return detail::unary(
        x, [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
        [](T v, T) {
            T u = k * (v + c * v * v * v);
            T t = std::tanh(u);
            T du = k * (T(1) + T(3) * c * v * v);
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        },
        "gelu");
}

// ---------------------------------------------------------------------------
// Reductions and broadcasting

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_result<T>(
        Shape{1}, {s}, {&x},
        [](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (auto& g : p.grad) g += self.grad[0];
        },
        "sum");
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sums out `axis`. A rank-1 input reduces to shape [1].
template <std::floating_point T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
    auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> out(outer * inner, T(0));
    const T* v = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) {
            const T* row = v + (o * n + k) * inner;
            T* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
        }
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x},
        [outer, n, inner](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t k = 0; k < n; ++k) {
                    T* dst = p.grad.data() + (o * n + k) * inner;
                    const T* g = self.grad.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        },
        "sum_axis");
}

template <std::floating_point T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
    return scale(sum_axis(x, axis), T(1) / static_cast<T>(x.shape().at(axis)));
}

/// Inserts a new axis of extent `n` at position `axis`, repeating the input along it.
template <std::floating_point T>
Tensor<T> expand(const Tensor<T>& x, std::size_t axis, std::size_t n) {
    if (axis > x.rank()) throw std::invalid_argument("expand: axis out of range");
    Shape out_shape = x.shape();
    out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis; i < x.rank(); ++i) inner *= x.shape()[i];
    std::vector<T> out(outer * n * inner);
    const T* v = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) std::copy_n(v + o * inner, inner, out.data() + (o * n + k) * inner);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x},
        [outer, n, inner](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t k = 0; k < n; ++k) {
                    const T* g = self.grad.data() + (o * n + k) * inner;
                    T* dst = p.grad.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        },
        "expand");
}

// ---------------------------------------------------------------------------
// Softmax family

/// Softmax of x / temperature along `axis`, max-subtracted.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis, T temperature = T(1)) {
    if (!(temperature > T(0))) throw std::invalid_argument("softmax: temperature must be positive");
    auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
    const T* v = x.data().data();
    std::vector<T> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T mx = v[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
            T z = T(0);
            for (std::size_t k = 0; k < n; ++k) {
                T e = std::exp((v[base + k * inner] - mx) / temperature);
                out[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
        }
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x},
        [outer, n, inner, temperature](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            const T* y = self.value.data();
            const T* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n * inner + i;
                    T dot = T(0);
                    for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
                    for (std::size_t k = 0; k < n; ++k) {
                        const std::size_t j = base + k * inner;
                        p.grad[j] += y[j] * (g[j] - dot) / temperature;
                    }
                }
        },
        "softmax");
}

template <std::floating_point T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis, T temperature = T(1)) {
    if (!(temperature > T(0))) throw std::invalid_argument("log_softmax: temperature must be positive");
    auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
    const T* v = x.data().data();
    std::vector<T> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            T mx = v[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
            T z = T(0);
            for (std::size_t k = 0; k < n; ++k) z += std::exp((v[base + k * inner] - mx) / temperature);
            const T lz = std::log(z);
            for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = (v[base + k * inner] - mx) / temperature - lz;
        }
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x},
        [outer, n, inner, temperature](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            const T* y = self.value.data();
            const T* g = self.grad.data();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n * inner + i;
                    T gs = T(0);
                    for (std::size_t k = 0; k < n; ++k) gs += g[base + k * inner];
                    for (std::size_t k = 0; k < n; ++k) {
                        const std::size_t j = base + k * inner;
                        p.grad[j] += (g[j] - std::exp(y[j]) * gs) / temperature;
                    }
                }
        },
        "log_softmax");
}

// ---------------------------------------------------------------------------
// Matrix products

/// x[..., K] * w[K, N] -> [..., N].
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
    if (w.rank() != 2 || x.shape().back() != w.dim(0))
        throw std::invalid_argument("matmul: cannot multiply " + to_string(x.shape()) + " by " + to_string(w.shape()));
    const std::size_t k = w.dim(0), n = w.dim(1), m = x.size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    std::vector<T> out(m * n);
    detail::gemm(x.data().data(), m, k, false, w.data().data(), k, n, false, out.data(), false);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x, &w},
        [m, k, n](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            if (px.requires_grad)
                detail::gemm(self.grad.data(), m, n, false, pw.value.data(), k, n, true, px.grad.data(), true);
            if (pw.requires_grad)
                detail::gemm(px.value.data(), m, k, true, self.grad.data(), m, n, false, pw.grad.data(), true);
        },
        "matmul");
}

template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add(matmul(x, w), b);
}

/// Batched product over all leading dims: op(a)[..., M, K] * op(b)[..., K, N].
template <std::floating_point T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
    if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
        throw std::invalid_argument("bmm: incompatible batch shapes " + to_string(a.shape()) + " and " +
                                    to_string(b.shape()));
    const std::size_t ar = a.shape()[a.rank() - 2], ac = a.shape().back();
    const std::size_t br = b.shape()[b.rank() - 2], bc = b.shape().back();
    const std::size_t m = trans_a ? ac : ar, ka = trans_a ? ar : ac;
    const std::size_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
    if (ka != kb) throw std::invalid_argument("bmm: inner dimensions differ");
    const std::size_t batch = a.size() / (ar * ac);
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i)
        detail::gemm(a.data().data() + i * ar * ac, ar, ac, trans_a, b.data().data() + i * br * bc, br, bc, trans_b,
                     out.data() + i * m * n, false);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&a, &b},
        [=](detail::Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            for (std::size_t i = 0; i < batch; ++i) {
                const T* g = self.grad.data() + i * m * n;
                const T* av = pa.value.data() + i * ar * ac;
                const T* bv = pb.value.data() + i * br * bc;
                if (pa.requires_grad) {
                    T* ga = pa.grad.data() + i * ar * ac;
                    // d op(A) = G * op(B)^T
                    if (!trans_a)
                        detail::gemm(g, m, n, false, bv, br, bc, !trans_b, ga, true);
                    else
                        detail::gemm(bv, br, bc, trans_b, g, m, n, true, ga, true);
                }
                if (pb.requires_grad) {
                    T* gb = pb.grad.data() + i * br * bc;
                    // d op(B) = op(A)^T * G
                    if (!trans_b)
                        detail::gemm(av, ar, ac, !trans_a, g, m, n, false, gb, true);
                    else
                        detail::gemm(g, m, n, true, av, ar, ac, trans_a, gb, true);
                }
            }
        },
        "bmm");
}

// ---------------------------------------------------------------------------
// Layout

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size())
        throw std::invalid_argument("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    return detail::make_result<T>(
        std::move(shape), x.values(), {&x},
        [](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        },
        "reshape");
}

namespace detail {

/// Maps each output flat index of a permutation to its input flat index.
inline std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& perm) {
    const std::size_t r = in_shape.size();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
    Shape out_shape(r);
    std::vector<std::size_t> stride(r);
    for (std::size_t k = 0; k < r; ++k) {
        out_shape[k] = in_shape[perm[k]];
        stride[k] = in_stride[perm[k]];
    }
    const std::size_t n = numel(in_shape);
    std::vector<std::size_t> idx(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = offset;
        for (std::size_t k = r; k-- > 0;) {
            if (++counter[k] < out_shape[k]) {
                offset += stride[k];
                break;
            }
            offset -= stride[k] * (out_shape[k] - 1);
            counter[k] = 0;
        }
    }
    return idx;
}

}  // namespace detail

/// Output axis k is input axis perm[k].
template <std::floating_point T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank()) throw std::invalid_argument("permute: rank mismatch");
    std::vector<bool> used(perm.size(), false);
    for (auto p : perm) {
        if (p >= perm.size() || used[p]) throw std::invalid_argument("permute: invalid permutation");
        used[p] = true;
    }
    Shape out_shape(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) out_shape[k] = x.shape()[perm[k]];
    auto idx = std::make_shared<std::vector<std::size_t>>(detail::permute_index(x.shape(), perm));
    std::vector<T> out(x.size());
    const T* v = x.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[(*idx)[i]];
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x},
        [idx](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[(*idx)[i]] += self.grad[i];
        },
        "permute");
}

template <std::floating_point T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
    auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
    if (len == 0 || start + len > n) throw std::invalid_argument("slice: range out of bounds");
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<T> out(outer * len * inner);
    const T* v = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(v + (o * n + start) * inner, len * inner, out.data() + o * len * inner);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x},
        [outer, n, inner, start, len](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * len * inner;
                T* dst = p.grad.data() + (o * n + start) * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        },
        "slice");
}

template <std::floating_point T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Shape out_shape = parts.front().shape();
    if (axis >= out_shape.size()) throw std::invalid_argument("concat: axis out of range");
    std::vector<std::size_t> extents;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != out_shape[i]) throw std::invalid_argument("concat: shape mismatch");
        extents.push_back(s[axis]);
        total += s[axis];
    }
    out_shape[axis] = total;
    auto [outer, n, inner] = detail::split_axis(out_shape, axis);
    std::vector<T> out(outer * total * inner);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const T* v = parts[k].data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v + o * extents[k] * inner, extents[k] * inner, out.data() + (o * total + offset) * inner);
        offset += extents[k];
    }
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), parts,
        [outer, total, inner, extents](detail::Node<T>& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < extents.size(); ++k) {
                auto& p = *self.parents[k];
                if (p.requires_grad)
                    for (std::size_t o = 0; o < outer; ++o) {
                        const T* g = self.grad.data() + (o * total + off) * inner;
                        T* dst = p.grad.data() + o * extents[k] * inner;
                        for (std::size_t i = 0; i < extents[k] * inner; ++i) dst[i] += g[i];
                    }
                off += extents[k];
            }
        },
        "concat");
}

/// Stacks equally shaped tensors along a new leading axis.
template <std::floating_point T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
    std::vector<Tensor<T>> lifted;
    lifted.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        lifted.push_back(reshape(p, s));
    }
    return concat(lifted, 0);
}

/// Rows `index` of x[R, ...] along axis 0.
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
    if (index.empty()) throw std::invalid_argument("gather_rows: empty index");
    const std::size_t rows = x.dim(0), width = x.size() / rows;
    for (auto i : index)
        if (i >= rows) throw std::out_of_range("gather_rows: index out of range");
    Shape out_shape = x.shape();
    out_shape[0] = index.size();
    std::vector<T> out(index.size() * width);
    for (std::size_t r = 0; r < index.size(); ++r)
        std::copy_n(x.data().data() + index[r] * width, width, out.data() + r * width);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&x},
        [index, width](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t r = 0; r < index.size(); ++r)
                for (std::size_t j = 0; j < width; ++j) p.grad[index[r] * width + j] += self.grad[r * width + j];
        },
        "gather_rows");
}

/// Builds a [total, D] sequence: row positions[r] takes rows[r], every other row
/// takes `filler` [D].
template <std::floating_point T>
Tensor<T> assemble_rows(const Tensor<T>& rows, const std::vector<std::size_t>& positions, const Tensor<T>& filler,
                        std::size_t total) {
    if (rows.rank() != 2 || rows.dim(0) != positions.size() || filler.size() != rows.dim(1))
        throw std::invalid_argument("assemble_rows: shape mismatch");
    const std::size_t width = rows.dim(1);
    std::vector<char> taken(total, 0);
    for (auto p : positions) {
        if (p >= total || taken[p]) throw std::invalid_argument("assemble_rows: bad position");
        taken[p] = 1;
    }
    std::vector<T> out(total * width);
    for (std::size_t t = 0; t < total; ++t)
        if (!taken[t]) std::copy_n(filler.data().data(), width, out.data() + t * width);
    for (std::size_t r = 0; r < positions.size(); ++r)
        std::copy_n(rows.data().data() + r * width, width, out.data() + positions[r] * width);
    return detail::make_result<T>(
        Shape{total, width}, std::move(out), {&rows, &filler},
        [positions, taken, width, total](detail::Node<T>& self) {
            auto& pr = *self.parents[0];
            auto& pf = *self.parents[1];
            if (pr.requires_grad)
                for (std::size_t r = 0; r < positions.size(); ++r)
                    for (std::size_t j = 0; j < width; ++j)
                        pr.grad[r * width + j] += self.grad[positions[r] * width + j];
            if (pf.requires_grad)
                for (std::size_t t = 0; t < total; ++t)
                    if (!taken[t])
                        for (std::size_t j = 0; j < width; ++j) pf.grad[j] += self.grad[t * width + j];
        },
        "assemble_rows");
}

/// Row-wise select between two equally shaped [R, ...] tensors: row r comes from `b`
/// where take_b[r] is set, otherwise from `a`.
template <std::floating_point T>
Tensor<T> where_rows(const Tensor<T>& a, const Tensor<T>& b, const std::vector<char>& take_b) {
    if (a.shape() != b.shape() || a.dim(0) != take_b.size()) throw std::invalid_argument("where_rows: shape mismatch");
    const std::size_t width = a.size() / a.dim(0);
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < take_b.size(); ++r)
        std::copy_n((take_b[r] ? b : a).data().data() + r * width, width, out.data() + r * width);
    return detail::make_result<T>(
        a.shape(), std::move(out), {&a, &b},
        [take_b, width](detail::Node<T>& self) {
            for (std::size_t r = 0; r < take_b.size(); ++r) {
                auto& p = *self.parents[take_b[r] ? 1 : 0];
                if (!p.requires_grad) continue;
                for (std::size_t j = 0; j < width; ++j) p.grad[r * width + j] += self.grad[r * width + j];
            }
        },
        "where_rows");
}

// ---------------------------------------------------------------------------
// Normalization, similarity, spatial ops

/// Layer normalization over the last axis.
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6)) {
    const std::size_t c = x.shape().back();
    if (gamma.size() != c || beta.size() != c) throw std::invalid_argument("layer_norm: parameter size mismatch");
    const std::size_t rows = x.size() / c;
    std::vector<T> out(x.size()), xhat(x.size()), inv_std(rows);
    const T* v = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = v + r * c;
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat[r * c + j] = (row[j] - mu) * inv_std[r];
            out[r * c + j] = xhat[r * c + j] * gamma.data()[j] + beta.data()[j];
        }
    }
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &gamma, &beta},
        [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const T* g = self.grad.data();
            for (std::size_t r = 0; r < rows; ++r) {
                T sum_d = T(0), sum_dx = T(0);
                for (std::size_t j = 0; j < c; ++j) {
                    const T d = g[r * c + j] * pg.value[j];
                    sum_d += d;
                    sum_dx += d * xhat[r * c + j];
                    if (pg.requires_grad) pg.grad[j] += g[r * c + j] * xhat[r * c + j];
                    if (pb.requires_grad) pb.grad[j] += g[r * c + j];
                }
                if (px.requires_grad)
                    for (std::size_t j = 0; j < c; ++j) {
                        const T d = g[r * c + j] * pg.value[j];
                        px.grad[r * c + j] += inv_std[r] / static_cast<T>(c) *
                                              (static_cast<T>(c) * d - sum_d - xhat[r * c + j] * sum_dx);
                    }
            }
        },
        "layer_norm");
}

/// Norm below which a vector counts as zero for cosine similarity.
template <std::floating_point T>
inline constexpr T kCosineZeroNorm = T(1e-12);

/// Cosine similarity along the last axis; 0 when either vector has norm < 1e-12.
template <std::floating_point T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("cosine_similarity: shape mismatch " + to_string(a.shape()) + " vs " +
                                    to_string(b.shape()));
    const std::size_t c = a.shape().back(), rows = a.size() / c;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    std::vector<T> out(rows), na(rows), nb(rows);
    const T* av = a.data().data();
    const T* bv = b.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0), aa = T(0), bb = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            dot += av[r * c + j] * bv[r * c + j];
            aa += av[r * c + j] * av[r * c + j];
            bb += bv[r * c + j] * bv[r * c + j];
        }
        na[r] = std::sqrt(aa);
        nb[r] = std::sqrt(bb);
        out[r] = (na[r] < kCosineZeroNorm<T> || nb[r] < kCosineZeroNorm<T>) ? T(0) : dot / (na[r] * nb[r]);
    }
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {&a, &b},
        [rows, c, na = std::move(na), nb = std::move(nb)](detail::Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            for (std::size_t r = 0; r < rows; ++r) {
                if (na[r] < kCosineZeroNorm<T> || nb[r] < kCosineZeroNorm<T>) continue;
                const T g = self.grad[r], cs = self.value[r];
                const T inv = T(1) / (na[r] * nb[r]);
                for (std::size_t j = 0; j < c; ++j) {
                    const T x = pa.value[r * c + j], y = pb.value[r * c + j];
                    if (pa.requires_grad) pa.grad[r * c + j] += g * (y * inv - cs * x / (na[r] * na[r]));
                    if (pb.requires_grad) pb.grad[r * c + j] += g * (x * inv - cs * y / (nb[r] * nb[r]));
                }
            }
        },
        "cosine_similarity");
}

/// 2-D convolution on NHWC input. `weight` is [k*k*Cin, Cout] in (ky, kx, cin) row order.
template <std::floating_point T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t kernel,
                 std::size_t stride, std::size_t pad) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: expected NHWC input");
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t patch = kernel * kernel * cin;
    if (weight.rank() != 2 || weight.dim(0) != patch) throw std::invalid_argument("conv2d: weight shape mismatch");
    const std::size_t cout = weight.dim(1);
    if (bias.size() != cout) throw std::invalid_argument("conv2d: bias shape mismatch");
    if (h + 2 * pad < kernel || w + 2 * pad < kernel) throw std::invalid_argument("conv2d: input smaller than kernel");
    const std::size_t ho = (h + 2 * pad - kernel) / stride + 1, wo = (w + 2 * pad - kernel) / stride + 1;
    const std::size_t positions = ho * wo;

    auto im2col = [=](const T* img, T* col) {
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                T* dst = col + (oy * wo + ox) * patch;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        T* d = dst + (ky * kernel + kx) * cin;
                        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w))
                            std::fill_n(d, cin, T(0));
                        else
                            std::copy_n(img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin, cin, d);
                    }
                }
            }
    };

    std::vector<T> out(batch * positions * cout);
    std::vector<T> col(positions * patch);
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(x.data().data() + b * h * w * cin, col.data());
        T* o = out.data() + b * positions * cout;
        detail::gemm(col.data(), positions, patch, false, weight.data().data(), patch, cout, false, o, false);
        for (std::size_t p = 0; p < positions; ++p)
            for (std::size_t c = 0; c < cout; ++c) o[p * cout + c] += bias.data()[c];
    }
    return detail::make_result<T>(
        Shape{batch, ho, wo, cout}, std::move(out), {&x, &weight, &bias},
        [=](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            std::vector<T> col(positions * patch), dcol(positions * patch);
            for (std::size_t b = 0; b < batch; ++b) {
                const T* g = self.grad.data() + b * positions * cout;
                if (pb.requires_grad)
                    for (std::size_t p = 0; p < positions; ++p)
                        for (std::size_t c = 0; c < cout; ++c) pb.grad[c] += g[p * cout + c];
                if (pw.requires_grad) {
                    im2col(px.value.data() + b * h * w * cin, col.data());
                    detail::gemm(col.data(), positions, patch, true, g, positions, cout, false, pw.grad.data(), true);
                }
                if (px.requires_grad) {
                    detail::gemm(g, positions, cout, false, pw.value.data(), patch, cout, true, dcol.data(), false);
                    T* gx = px.grad.data() + b * h * w * cin;
                    for (std::size_t oy = 0; oy < ho; ++oy)
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                            const T* src = dcol.data() + (oy * wo + ox) * patch;
                            for (std::size_t ky = 0; ky < kernel; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < kernel; ++kx) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    T* d = gx + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin;
                                    const T* s = src + (ky * kernel + kx) * cin;
                                    for (std::size_t c = 0; c < cin; ++c) d[c] += s[c];
                                }
                            }
                        }
                }
            }
        },
        "conv2d");
}

/// Non-overlapping average pooling by `factor` on NHWC input.
template <std::floating_point T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t factor) {
    if (x.rank() != 4) throw std::invalid_argument("avg_pool2d: expected NHWC input");
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (factor == 0 || h % factor || w % factor) throw std::invalid_argument("avg_pool2d: factor must divide H and W");
    const std::size_t ho = h / factor, wo = w / factor;
    const T inv = T(1) / static_cast<T>(factor * factor);
    std::vector<T> out(batch * ho * wo * c, T(0));
    const T* v = x.data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const T* src = v + ((b * h + y) * w + xx) * c;
                T* dst = out.data() + ((b * ho + y / factor) * wo + xx / factor) * c;
                for (std::size_t k = 0; k < c; ++k) dst[k] += src[k] * inv;
            }
    return detail::make_result<T>(
        Shape{batch, ho, wo, c}, std::move(out), {&x},
        [=](detail::Node<T>& self) {
            auto& p = *self.parents[0];
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        T* dst = p.grad.data() + ((b * h + y) * w + xx) * c;
                        const T* g = self.grad.data() + ((b * ho + y / factor) * wo + xx / factor) * c;
                        for (std::size_t k = 0; k < c; ++k) dst[k] += g[k] * inv;
                    }
        },
        "avg_pool2d");
}

}  // namespace occlu
