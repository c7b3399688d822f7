#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace occlu {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <std::floating_point T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major array with an optional place in a reverse-mode graph.
///
/// Tensors are handles: copying one shares the underlying node. Values are
/// never modified after an operation produces them. Leaf tensors (parameters
/// and buffers) are the single exception and may be updated in place through
/// mutable_data() between training steps.
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;
    using node_type = detail::Node<T>;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<node_type>()) {
        if (shape.empty() || std::ranges::any_of(shape, [](std::size_t d) { return d == 0; }))
            throw std::invalid_argument("tensor shape must be non-empty with positive extents, got " +
                                        to_string(shape));
        if (numel(shape) != values.size())
            throw std::invalid_argument("tensor shape " + to_string(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        for (T v : values)
            if (!std::isfinite(v)) throw std::domain_error("non-finite value in tensor construction");
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    explicit Tensor(std::shared_ptr<node_type> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    static Tensor vector(std::vector<T> values, bool requires_grad = false) {
        auto n = values.size();
        return Tensor(Shape{n}, std::move(values), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return checked().shape; }
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t size() const { return checked().value.size(); }
    bool requires_grad() const { return checked().requires_grad; }
    bool is_leaf() const { return checked().parents.empty(); }

    std::span<const T> data() const { return checked().value; }
    const std::vector<T>& values() const { return checked().value; }

    /// In-place access for leaves only (optimizer updates, running statistics).
    std::span<T> mutable_data() {
        if (!is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
        return node_->value;
    }

    T item() const {
        if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
        return checked().value[0];
    }

    T operator[](std::size_t i) const { return checked().value.at(i); }

    /// Value copy that is cut from the graph.
    Tensor detach() const { return Tensor(shape(), values(), false); }

    const std::shared_ptr<node_type>& node() const { return node_; }

private:
    const node_type& checked() const {
        if (!node_) throw std::logic_error("use of undefined tensor");
        return *node_;
    }

    std::shared_ptr<node_type> node_;
};

namespace detail {

template <std::floating_point T>
void check_finite(std::span<const T> values, const char* op) {
    for (T v : values)
        if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite value produced by ") + op);
}

/// Builds the output of an operation and records it when any input needs a gradient.
template <std::floating_point T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
    check_finite<T>(value, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (grad_mode_flag()) {
        bool any = false;
        for (auto* in : inputs) any = any || in->requires_grad();
        if (any) {
            node->requires_grad = true;
            for (auto* in : inputs) node->parents.push_back(in->node());
            node->backward = std::move(backward);
        }
    }
    return Tensor<T>(std::move(node));
}

template <std::floating_point T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
    check_finite<T>(value, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (grad_mode_flag()) {
        bool any = std::ranges::any_of(inputs, [](const Tensor<T>& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            for (const auto& in : inputs) node->parents.push_back(in.node());
            node->backward = std::move(backward);
        }
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Reverse-mode gradients of a one-element loss with respect to each tensor in `params`.
///
/// A parameter that the loss does not depend on receives an all-zero gradient.
/// The recorded graph is left intact, so calling this twice gives identical results.
template <std::floating_point T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, std::span<const Tensor<T>> params) {
    using N = detail::Node<T>;
    if (loss.size() != 1)
        throw std::invalid_argument("grad() needs a one-element loss, got shape " + to_string(loss.shape()));

    std::vector<N*> order;
    std::unordered_set<N*> seen;
    if (loss.requires_grad()) {
        // Iterative post-order DFS.
        std::vector<std::pair<N*, std::size_t>> stack{{loss.node().get(), 0}};
        seen.insert(loss.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                N* parent = node->parents[next++].get();
                if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    for (N* n : order) n->grad.assign(n->value.size(), T(0));
    if (!order.empty()) loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);

    std::vector<Tensor<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        N* n = p.node().get();
        if (seen.contains(n))
            out.emplace_back(p.shape(), n->grad);
        else
            out.push_back(Tensor<T>::zeros(p.shape()));
    }
    for (N* n : order) std::vector<T>().swap(n->grad);
    return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> grad(const Tensor<T>& loss, const std::vector<Tensor<T>>& params) {
    return grad(loss, std::span<const Tensor<T>>(params));
}

}  // namespace occlu
