#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/ops.hpp"

namespace occlu::mae {

/// Multi-head self-attention over x[B, L, D].
template <std::floating_point T>
Tensor<T> self_attention(const Tensor<T>& x, const Linear<T>& qkv, const Linear<T>& proj, std::size_t heads) {
    const std::size_t b = x.dim(0), l = x.dim(1), d = x.dim(2);
    if (d % heads) throw std::invalid_argument("self_attention: dim not divisible by heads");
    const std::size_t dh = d / heads;
    auto packed = reshape(qkv(x), {b, l, 3, heads, dh});
    auto split = reshape(permute(packed, {2, 0, 3, 1, 4}), {3, b * heads, l, dh});
    auto q = reshape(slice(split, 0, 0, 1), {b * heads, l, dh});
    auto k = reshape(slice(split, 0, 1, 1), {b * heads, l, dh});
    auto v = reshape(slice(split, 0, 2, 1), {b * heads, l, dh});
    auto scores = scale(bmm(q, k, false, true), T(1) / std::sqrt(static_cast<T>(dh)));
    auto attn = softmax(scores, 2);
    auto ctx = reshape(bmm(attn, v), {b, heads, l, dh});
    return proj(reshape(permute(ctx, {0, 2, 1, 3}), {b, l, d}));
}

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
template <std::floating_point T>
struct TransformerBlock {
    LayerNorm<T> norm1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNorm<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;
    std::size_t heads = 1;

    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads_, std::size_t mlp_ratio, Rng& rng)
        : norm1(dim),
          qkv(dim, 3 * dim, rng),
          proj(dim, dim, rng),
          norm2(dim),
          fc1(dim, dim * mlp_ratio, rng),
          fc2(dim * mlp_ratio, dim, rng),
          heads(heads_) {}

    /// x is [B, L, D].
    Tensor<T> operator()(const Tensor<T>& x) const {
        auto h = add(x, self_attention(norm1(x), qkv, proj, heads));
        return add(h, fc2(gelu(fc1(norm2(h)))));
    }

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        norm1.collect(ps, prefix + ".norm1", group);
        qkv.collect(ps, prefix + ".qkv", group);
        proj.collect(ps, prefix + ".proj", group);
        norm2.collect(ps, prefix + ".norm2", group);
        fc1.collect(ps, prefix + ".fc1", group);
        fc2.collect(ps, prefix + ".fc2", group);
    }
};

/// Fixed 2-D sine/cosine position table [grid_h * grid_w, dim]: the first half of the
/// channels encodes the row, the second half the column.
template <std::floating_point T>
Tensor<T> sincos_position_table(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
    if (dim % 4) throw std::invalid_argument("position embedding dim must be divisible by 4");
    const std::size_t half = dim / 2, quarter = dim / 4;
    std::vector<T> table(grid_h * grid_w * dim);
    for (std::size_t r = 0; r < grid_h; ++r)
        for (std::size_t c = 0; c < grid_w; ++c) {
            T* row = table.data() + (r * grid_w + c) * dim;
            for (std::size_t i = 0; i < quarter; ++i) {
                const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
                row[i] = static_cast<T>(std::sin(static_cast<double>(r) * omega));
                row[quarter + i] = static_cast<T>(std::cos(static_cast<double>(r) * omega));
                row[half + i] = static_cast<T>(std::sin(static_cast<double>(c) * omega));
                row[half + quarter + i] = static_cast<T>(std::cos(static_cast<double>(c) * omega));
            }
        }
    return Tensor<T>({grid_h * grid_w, dim}, std::move(table));
}

}  // namespace occlu::mae
