#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/ops.hpp"

namespace occlu::augraph {

inline constexpr double kProbClamp = 1e-6;

struct ClassWeights {
    std::vector<double> w;
    std::vector<double> r;
};

/// w_i = N (1/r_i) / sum_j (1/r_j).
inline ClassWeights class_weights(const std::vector<double>& rates) {
    if (rates.empty()) throw std::invalid_argument("class_weights: no rates");
    double inv_sum = 0.0;
    for (double r : rates) {
        if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("class_weights: rates must lie in (0, 1]");
        inv_sum += 1.0 / r;
    }
    const double n = static_cast<double>(rates.size());
    ClassWeights cw{{}, rates};
    for (double r : rates) cw.w.push_back(n * (1.0 / r) / inv_sum);
    return cw;
}

/// Occurrence rate of each AU over binary label rows [samples x N].
inline std::vector<double> occurrence_rates(const std::vector<std::vector<int>>& labels, std::size_t n_au) {
    std::vector<double> rates(n_au, 0.0);
    for (const auto& row : labels)
        for (std::size_t i = 0; i < n_au; ++i) rates[i] += row.at(i);
    for (auto& r : rates) r = labels.empty() ? 0.0 : r / static_cast<double>(labels.size());
    return rates;
}

/// max(p - m, 0).
template <std::floating_point T>
Tensor<T> shift_prob(const Tensor<T>& p, T m) {
    if (!(m >= T(0) && m < T(1))) throw std::invalid_argument("shift_prob: margin must lie in [0, 1)");
    return m == T(0) ? p : relu(add_scalar(p, -m));
}

namespace detail {

template <std::floating_point T>
void check_binary(const Tensor<T>& y, const char* op) {
    for (T v : y.data())
        if (v != T(0) && v != T(1)) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
}

}  // namespace detail

/// Weighted asymmetric loss on p[..., N] against binary y[..., N], averaged over AUs and rows:
/// -(1/N) sum_i w_i [y log p_m + (1 - y) p_m^gamma log(1 - p_m)], p_m = shift_prob(p, m).
template <std::floating_point T>
Tensor<T> au_loss(const Tensor<T>& p, const Tensor<T>& y, const std::vector<double>& w, T m, T gamma) {
    if (p.shape() != y.shape()) throw std::invalid_argument("au_loss: probability/label shape mismatch");
    const std::size_t n = p.shape().back();
    if (w.size() != n) throw std::invalid_argument("au_loss: one weight per AU required");
    detail::check_binary(y, "au_loss");
    for (T v : p.data())
        if (v < T(0) || v > T(1)) throw std::invalid_argument("au_loss: probabilities must lie in [0, 1]");
    const T eps = static_cast<T>(kProbClamp);
    auto pm = clamp(shift_prob(p, m), eps, T(1) - eps);
    auto not_y = add_scalar(neg(y), T(1));
    auto pos = mul(y, log(pm));
    auto focal = gamma == T(0) ? log(add_scalar(neg(pm), T(1))) : mul(pow_scalar(pm, gamma), log(add_scalar(neg(pm), T(1))));
    auto terms = add(pos, mul(not_y, focal));
    std::vector<T> wt(w.begin(), w.end());
    auto weighted = mul(terms, Tensor<T>({n}, std::move(wt)));
    return scale(sum(weighted), T(-1) / static_cast<T>(p.size()));
}

/// Edge class 2*y_i + y_j in the order (0,0), (0,1), (1,0), (1,1).
inline std::size_t edge_class(int yi, int yj) { return static_cast<std::size_t>(2 * yi + yj); }

/// One-hot edge targets [..., N, N, 4] from AU labels y[..., N].
template <std::floating_point T>
Tensor<T> edge_targets(const Tensor<T>& y) {
    detail::check_binary(y, "edge_targets");
    const std::size_t n = y.shape().back(), rows = y.size() / n;
    Shape shape(y.shape().begin(), y.shape().end() - 1);
    shape.push_back(n);
    shape.push_back(n);
    shape.push_back(4);
    std::vector<T> out(rows * n * n * 4, T(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const auto cls = edge_class(static_cast<int>(y[r * n + i]), static_cast<int>(y[r * n + j]));
                out[((r * n + i) * n + j) * 4 + cls] = T(1);
            }
    return Tensor<T>(std::move(shape), std::move(out));
}

/// Mean categorical cross-entropy over all edges of logits z[..., N, N, 4].
template <std::floating_point T>
Tensor<T> edge_loss(const Tensor<T>& z, const Tensor<T>& targets) {
    if (z.shape() != targets.shape() || z.shape().back() != 4)
        throw std::invalid_argument("edge_loss: logits " + to_string(z.shape()) + " vs targets " +
                                    to_string(targets.shape()));
    const std::size_t edges = z.size() / 4;
    for (std::size_t e = 0; e < edges; ++e) {
        T s = T(0);
        for (std::size_t k = 0; k < 4; ++k) {
            const T t = targets[e * 4 + k];
            if (t != T(0) && t != T(1)) throw std::invalid_argument("edge_loss: targets must be one-hot");
            s += t;
        }
        if (s != T(1)) throw std::invalid_argument("edge_loss: targets must be one-hot");
    }
    auto ll = mul(log_softmax(z, z.rank() - 1), targets);
    return scale(sum(ll), T(-1) / static_cast<T>(edges));
}

/// L_AU + lambda * L_E.
template <std::floating_point T>
Tensor<T> stage2_loss(const Tensor<T>& l_au, const Tensor<T>& l_e, T lambda) {
    if (!(lambda >= T(0))) throw std::invalid_argument("stage2_loss: lambda must be non-negative");
    return add(l_au, scale(l_e, lambda));
}

}  // namespace occlu::augraph
