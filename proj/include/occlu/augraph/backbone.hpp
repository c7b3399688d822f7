#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/batch_norm.hpp"
#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/ops.hpp"

namespace occlu::augraph {

struct ConvSpec {
    std::size_t in, out, kernel, stride, pad;
};

/// Strided convolution stack: 64x64x3 -> 8x8xC by default.
inline std::vector<ConvSpec> default_backbone_layers(std::size_t channels = 32) {
    return {{3, 32, 3, 2, 1}, {32, 64, 3, 2, 1}, {64, 64, 3, 2, 1}, {64, channels, 3, 1, 1}};
}

template <std::floating_point T>
struct Backbone {
    std::vector<Conv2d<T>> convs;
    std::vector<BatchNormState<T>> norms;

    Backbone() = default;
    Backbone(const std::vector<ConvSpec>& layers, Rng& rng) {
        if (layers.empty()) throw std::invalid_argument("Backbone: no layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (i > 0 && l.in != layers[i - 1].out) throw std::invalid_argument("Backbone: channel chain broken");
            convs.emplace_back(l.in, l.out, l.kernel, l.stride, l.pad, rng);
            norms.emplace_back(l.out);
        }
    }

    /// images[B, H, W, 3] -> F[B, H', W', C]; each block is conv, batch norm, ReLU.
    Tensor<T> operator()(const Tensor<T>& images, NormMode mode) {
        Tensor<T> x = images;
        for (std::size_t i = 0; i < convs.size(); ++i) x = relu(batch_norm(convs[i](x), norms[i], mode));
        return x;
    }

    void collect(ParamSet<T>& ps, const std::string& prefix = "backbone", const std::string& group = "backbone") const {
        for (std::size_t i = 0; i < convs.size(); ++i) {
            convs[i].collect(ps, prefix + ".conv" + std::to_string(i), group);
            ps.add_batch_norm(prefix + ".bn" + std::to_string(i), norms[i], group);
        }
    }
};

}  // namespace occlu::augraph
