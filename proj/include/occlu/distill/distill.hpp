#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "occlu/numerics/batch_norm.hpp"
#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/ops.hpp"

namespace occlu::distill {

inline constexpr double kProbClamp = 1e-6;

/// Argument order of the KL terms. `student_teacher` is D_KL(student, teacher).
enum class KLOrder { student_teacher, teacher_student };

inline KLOrder parse_kl_order(const std::string& s) {
    if (s == "student_teacher") return KLOrder::student_teacher;
    if (s == "teacher_student") return KLOrder::teacher_student;
    throw std::invalid_argument("unknown KL order '" + s + "'");
}

inline std::string to_string(KLOrder o) {
    return o == KLOrder::student_teacher ? "student_teacher" : "teacher_student";
}

struct KDConfig {
    double temperature = 2.0;
    double alpha = 1.0;
    double beta = 0.1;
    KLOrder order = KLOrder::student_teacher;

    void validate() const {
        if (!(temperature > 0.0)) throw std::invalid_argument("KDConfig: temperature must be positive");
        if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("KDConfig: weights must be non-negative");
    }
};

/// Maps a full token grid [B, P, D] into a feature map [B, H, W, C].
template <std::floating_point T>
struct AlignmentParams {
    std::size_t pool = 1;
    Linear<T> fc1, fc2;
    BatchNormState<T> norm;

    AlignmentParams() = default;
    AlignmentParams(std::size_t enc_dim, std::size_t channels, std::size_t pool_, Rng& rng)
        : pool(pool_), fc1(enc_dim, 2 * channels, rng), fc2(2 * channels, channels, rng), norm(channels) {
        if (pool == 0) throw std::invalid_argument("AlignmentParams: pool factor must be positive");
    }

    void collect(ParamSet<T>& ps, const std::string& prefix = "align", const std::string& group = "align") const {
        fc1.collect(ps, prefix + ".fc1", group);
        fc2.collect(ps, prefix + ".fc2", group);
        ps.add_batch_norm(prefix + ".bn", norm, group);
    }
};

/// tokens[B, P, D] -> grid -> average pool -> relu(BN(fc2(relu(fc1(.))))) per position, the
/// same normalization and rectification as the backbone output.
template <std::floating_point T>
Tensor<T> align_features(const Tensor<T>& tokens, AlignmentParams<T>& params, NormMode mode) {
    if (tokens.rank() != 3) throw std::invalid_argument("align_features: expected B x P x D tokens");
    const std::size_t b = tokens.dim(0), p = tokens.dim(1), d = tokens.dim(2);
    const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
    if (g * g != p) throw std::invalid_argument("align_features: token count " + std::to_string(p) + " is not square");
    auto grid = reshape(tokens, {b, g, g, d});
    if (params.pool > 1) grid = avg_pool2d(grid, params.pool);
    return relu(batch_norm(params.fc2(relu(params.fc1(grid))), params.norm, mode));
}

namespace detail {

template <std::floating_point T>
void check_unit_interval(const Tensor<T>& p, const char* op) {
    for (T v : p.data())
        if (v < T(0) || v > T(1)) throw std::invalid_argument(std::string(op) + ": probabilities must lie in [0, 1]");
}

/// sum over entries of a * (log a - log b).
template <std::floating_point T>
Tensor<T> kl_terms(const Tensor<T>& a, const Tensor<T>& b) {
    return mul(a, sub(log(a), log(b)));
}

}  // namespace detail

/// Per-AU Bernoulli KL between student and teacher probabilities p[..., N], averaged over
/// AUs and rows. The teacher side is treated as a constant.
template <std::floating_point T>
Tensor<T> kd_au_loss(const Tensor<T>& p_s, const Tensor<T>& p_t, KLOrder order = KLOrder::student_teacher) {
    if (p_s.shape() != p_t.shape()) throw std::invalid_argument("kd_au_loss: shape mismatch");
    detail::check_unit_interval(p_s, "kd_au_loss");
    detail::check_unit_interval(p_t, "kd_au_loss");
    const T eps = static_cast<T>(kProbClamp);
    auto s = clamp(p_s, eps, T(1) - eps);
    auto t = clamp(p_t.detach(), eps, T(1) - eps);
    auto s1 = add_scalar(neg(s), T(1));
    auto t1 = add_scalar(neg(t), T(1));
    auto terms = order == KLOrder::student_teacher ? add(detail::kl_terms(s, t), detail::kl_terms(s1, t1))
                                                   : add(detail::kl_terms(t, s), detail::kl_terms(t1, s1));
    return scale(sum(terms), T(1) / static_cast<T>(p_s.size()));
}

/// T^2 KL between temperature-softened edge distributions of logits z[..., 4], averaged over
/// edges. Softmax outputs are clamped below at 1e-6. The teacher side is a constant.
template <std::floating_point T>
Tensor<T> kd_edge_loss(const Tensor<T>& z_s, const Tensor<T>& z_t, T temperature,
                       KLOrder order = KLOrder::student_teacher) {
    if (!(temperature > T(0))) throw std::invalid_argument("kd_edge_loss: temperature must be positive");
    if (z_s.shape() != z_t.shape()) throw std::invalid_argument("kd_edge_loss: shape mismatch");
    const std::size_t axis = z_s.rank() - 1;
    const T eps = static_cast<T>(kProbClamp);
    auto qs = clamp(softmax(z_s, axis, temperature), eps, T(1));
    auto qt = clamp(softmax(z_t.detach(), axis, temperature), eps, T(1));
    auto terms = order == KLOrder::student_teacher ? detail::kl_terms(qs, qt) : detail::kl_terms(qt, qs);
    const std::size_t edges = z_s.size() / z_s.shape().back();
    return scale(sum(terms), temperature * temperature / static_cast<T>(edges));
}

/// L_kd = L_au + beta * L_edge.
template <std::floating_point T>
Tensor<T> kd_loss(const Tensor<T>& l_au, const Tensor<T>& l_edge, T beta) {
    if (!(beta >= T(0))) throw std::invalid_argument("kd_loss: beta must be non-negative");
    return add(l_au, scale(l_edge, beta));
}

/// L_AU + lambda * L_E + alpha * L_kd.
template <std::floating_point T>
Tensor<T> student_loss(const Tensor<T>& l_au, const Tensor<T>& l_e, const Tensor<T>& l_kd, T lambda, T alpha) {
    if (!(lambda >= T(0)) || !(alpha >= T(0))) throw std::invalid_argument("student_loss: weights must be non-negative");
    return add(add(l_au, scale(l_e, lambda)), scale(l_kd, alpha));
}

}  // namespace occlu::distill
