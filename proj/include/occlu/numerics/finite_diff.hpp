#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "occlu/numerics/tensor.hpp"

namespace occlu {

/// Central-difference gradient of a scalar function of one tensor.
/// `f` must be pure and deterministic; it is evaluated 2 * p.size() times.
template <std::floating_point T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& p, T eps) {
    if (!(eps > T(0))) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    NoGradGuard no_grad;
    std::vector<T> base = p.values();
    std::vector<T> out(base.size());
    auto eval = [&](const std::vector<T>& values) {
        T y = static_cast<T>(f(Tensor<T>(p.shape(), values)));
        if (!std::isfinite(y)) throw std::domain_error("finite_diff_grad: function returned a non-finite value");
        return y;
    };
    for (std::size_t k = 0; k < base.size(); ++k) {
        std::vector<T> plus = base, minus = base;
        plus[k] += eps;
        minus[k] -= eps;
        out[k] = (eval(plus) - eval(minus)) / (T(2) * eps);
    }
    return Tensor<T>(p.shape(), std::move(out));
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <std::floating_point T>
T relative_error(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw std::invalid_argument("relative_error: size mismatch");
    T diff = T(0), na = T(0), nb = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const T denom = std::sqrt(std::max(na, nb));
    if (denom == T(0)) return T(0);
    return std::sqrt(diff) / denom;
}

}  // namespace occlu
