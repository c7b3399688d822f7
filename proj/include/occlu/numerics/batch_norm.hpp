#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "occlu/numerics/tensor.hpp"

namespace occlu {

enum class NormMode { train, eval };

/// Learned per-channel affine plus running statistics for batch normalization.
/// Channels are the last axis of the normalized tensor.
template <std::floating_point T>
struct BatchNormState {
    Tensor<T> scale;
    Tensor<T> offset;
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels, T momentum_ = T(0.1), T eps_ = T(1e-5))
        : scale(Tensor<T>::full({channels}, T(1), true)),
          offset(Tensor<T>::zeros({channels}, true)),
          running_mean(Tensor<T>::zeros({channels})),
          running_var(Tensor<T>::full({channels}, T(1))),
          momentum(momentum_),
          eps(eps_) {
        if (!(momentum > T(0) && momentum < T(1))) throw std::invalid_argument("batch norm momentum must lie in (0,1)");
        if (!(eps > T(0))) throw std::invalid_argument("batch norm epsilon must be positive");
    }

    std::size_t channels() const { return scale.size(); }
};

/// Normalizes x[B, ..., C] per channel. Train mode uses batch statistics over every
/// position and updates the running statistics; eval mode uses the running statistics.
template <std::floating_point T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, NormMode mode) {
    const std::size_t c = state.channels();
    if (x.shape().back() != c) throw std::invalid_argument("batch_norm: channel mismatch");
    const std::size_t rows = x.size() / c;
    const T* v = x.data().data();
    std::vector<T> mu(c, T(0)), var(c, T(0));

    if (mode == NormMode::train) {
        if (x.rank() < 2 || x.dim(0) < 2) throw std::invalid_argument("batch_norm: train mode needs batch size >= 2");
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) mu[j] += v[r * c + j];
        for (auto& m : mu) m /= static_cast<T>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) var[j] += (v[r * c + j] - mu[j]) * (v[r * c + j] - mu[j]);
        for (auto& s : var) s /= static_cast<T>(rows);
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        const T unbias = static_cast<T>(rows) / static_cast<T>(rows - 1);
        for (std::size_t j = 0; j < c; ++j) {
            rm[j] = (T(1) - state.momentum) * rm[j] + state.momentum * mu[j];
            rv[j] = (T(1) - state.momentum) * rv[j] + state.momentum * var[j] * unbias;
        }
    } else {
        for (std::size_t j = 0; j < c; ++j) {
            mu[j] = state.running_mean.data()[j];
            var[j] = state.running_var.data()[j];
        }
    }

    std::vector<T> inv_std(c), xhat(x.size()), out(x.size());
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = T(1) / std::sqrt(var[j] + state.eps);
    const T* g = state.scale.data().data();
    const T* b = state.offset.data().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            xhat[r * c + j] = (v[r * c + j] - mu[j]) * inv_std[j];
            out[r * c + j] = xhat[r * c + j] * g[j] + b[j];
        }

    const bool train = mode == NormMode::train;
    return detail::make_result<T>(
        x.shape(), std::move(out), {&x, &state.scale, &state.offset},
        [rows, c, train, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::Node<T>& self) {
            auto& px = *self.parents[0];
            auto& ps = *self.parents[1];
            auto& po = *self.parents[2];
            const T* gy = self.grad.data();
            std::vector<T> sum_d(c, T(0)), sum_dx(c, T(0));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const T gij = gy[r * c + j];
                    if (ps.requires_grad) ps.grad[j] += gij * xhat[r * c + j];
                    if (po.requires_grad) po.grad[j] += gij;
                    const T d = gij * ps.value[j];
                    sum_d[j] += d;
                    sum_dx[j] += d * xhat[r * c + j];
                }
            if (!px.requires_grad) return;
            const T n = static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const T d = gy[r * c + j] * ps.value[j];
                    if (train)
                        px.grad[r * c + j] += inv_std[j] / n * (n * d - sum_d[j] - xhat[r * c + j] * sum_dx[j]);
                    else
                        px.grad[r * c + j] += d * inv_std[j];
                }
        },
        "batch_norm");
}

}  // namespace occlu
