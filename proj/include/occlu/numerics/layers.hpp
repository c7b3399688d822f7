#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/batch_norm.hpp"
#include "occlu/numerics/ops.hpp"
#include "occlu/numerics/random.hpp"
#include "occlu/numerics/tensor.hpp"

namespace occlu {

template <std::floating_point T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
    std::string group;
};

/// Ordered registry of a model's tensors. Handles share storage with the model,
/// so loading values through a ParamSet updates the model in place.
template <std::floating_point T>
class ParamSet {
public:
    void add(std::string name, const Tensor<T>& tensor, std::string group, bool trainable = true) {
        for (const auto& e : entries_)
            if (e.name == name) throw std::logic_error("duplicate parameter name " + name);
        entries_.push_back({std::move(name), tensor, trainable, std::move(group)});
    }

    void add_batch_norm(const std::string& prefix, const BatchNormState<T>& bn, const std::string& group) {
        add(prefix + ".scale", bn.scale, group);
        add(prefix + ".offset", bn.offset, group);
        add(prefix + ".running_mean", bn.running_mean, group, false);
        add(prefix + ".running_var", bn.running_var, group, false);
    }

    const std::vector<NamedTensor<T>>& entries() const { return entries_; }

    std::vector<Tensor<T>> trainable() const {
        std::vector<Tensor<T>> out;
        for (const auto& e : entries_)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    std::vector<std::string> trainable_groups() const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.trainable) out.push_back(e.group);
        return out;
    }

    /// Number of trainable scalars.
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.size();
        return n;
    }

    const NamedTensor<T>* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

private:
    std::vector<NamedTensor<T>> entries_;
};

/// Copies values between two parameter sets by name; every name in `dst` must exist in `src`
/// unless `allow_missing` is set.
template <std::floating_point T>
void copy_values(const ParamSet<T>& src, ParamSet<T>& dst, bool allow_missing = false) {
    for (const auto& e : dst.entries()) {
        const auto* s = src.find(e.name);
        if (!s) {
            if (allow_missing) continue;
            throw std::invalid_argument("copy_values: missing tensor " + e.name);
        }
        if (s->tensor.shape() != e.tensor.shape()) throw std::invalid_argument("copy_values: shape mismatch for " + e.name);
        auto t = e.tensor;
        std::copy(s->tensor.data().begin(), s->tensor.data().end(), t.mutable_data().begin());
    }
}

template <std::floating_point T>
Tensor<T> uniform_init(Shape shape, T bound, Rng& rng) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-static_cast<double>(bound), static_cast<double>(bound)));
    return Tensor<T>(std::move(shape), std::move(v), true);
}

/// Affine map over the last axis: x W + b.
template <std::floating_point T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(uniform_init<T>({in, out}, static_cast<T>(std::sqrt(6.0 / static_cast<double>(in + out))), rng)),
          bias(Tensor<T>::zeros({out}, true)) {}

    static Linear zeros(std::size_t in, std::size_t out) {
        Linear l;
        l.weight = Tensor<T>::zeros({in, out}, true);
        l.bias = Tensor<T>::zeros({out}, true);
        return l;
    }

    std::size_t in() const { return weight.dim(0); }
    std::size_t out() const { return weight.dim(1); }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        ps.add(prefix + ".weight", weight, group);
        ps.add(prefix + ".bias", bias, group);
    }
};

template <std::floating_point T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim) : gamma(Tensor<T>::full({dim}, T(1), true)), beta(Tensor<T>::zeros({dim}, true)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        ps.add(prefix + ".gamma", gamma, group);
        ps.add(prefix + ".beta", beta, group);
    }
};

/// Square-kernel convolution on NHWC tensors.
template <std::floating_point T>
struct Conv2d {
    Tensor<T> weight;  // [k*k*in, out]
    Tensor<T> bias;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel_, std::size_t stride_, std::size_t pad_, Rng& rng)
        : weight(uniform_init<T>({kernel_ * kernel_ * in, out},
                                 static_cast<T>(std::sqrt(6.0 / static_cast<double>(kernel_ * kernel_ * in))), rng)),
          bias(Tensor<T>::zeros({out}, true)),
          kernel(kernel_),
          stride(stride_),
          pad(pad_) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, kernel, stride, pad); }

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        ps.add(prefix + ".weight", weight, group);
        ps.add(prefix + ".bias", bias, group);
    }
};

}  // namespace occlu
