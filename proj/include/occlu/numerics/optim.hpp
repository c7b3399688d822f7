#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "occlu/numerics/tensor.hpp"

namespace occlu {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
};

/// Adaptive-moment optimizer with decoupled weight decay. Each parameter carries a
/// learning-rate multiplier so parameter groups can train at different rates.
template <std::floating_point T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, std::vector<double> lr_scale, AdamWOptions options)
        : params_(std::move(params)), lr_scale_(std::move(lr_scale)), options_(options) {
        if (lr_scale_.size() != params_.size()) throw std::invalid_argument("AdamW: one lr multiplier per parameter");
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), T(0));
            v_.emplace_back(p.size(), T(0));
        }
    }

    void step(const std::vector<Tensor<T>>& grads, double lr) {
        if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (lr_scale_[i] == 0.0) continue;
            const T rate = static_cast<T>(lr * lr_scale_[i]);
            const T decay = static_cast<T>(lr * lr_scale_[i] * options_.weight_decay);
            auto p = params_[i].mutable_data();
            auto g = grads[i].data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                p[k] -= decay * p[k];
                m[k] = b1 * m[k] + (T(1) - b1) * g[k];
                v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
                const T mhat = m[k] / static_cast<T>(bc1);
                const T vhat = v[k] / static_cast<T>(bc2);
                p[k] -= rate * mhat / (std::sqrt(vhat) + static_cast<T>(options_.eps));
            }
        }
    }

    std::size_t steps() const { return t_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<double> lr_scale_;
    AdamWOptions options_;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace occlu
