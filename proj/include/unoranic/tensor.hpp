#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A tensor is a shared handle to a graph node. Ops create new nodes and, when
// gradient recording is enabled and any input requires a gradient, remember
// their inputs and a backward rule. Every node gets a creation sequence number
// from a thread-local counter; since inputs always exist before the op that
// consumes them, descending sequence order is a valid reverse topological
// order and serves as the tape.
//
// All reductions run sequentially over the flat row-major index, so forward
// and backward results are bitwise reproducible for identical inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unoranic {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first written
    bool requires_grad = false;
    bool consumed = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into inputs

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

std::uint64_t next_sequence() noexcept;

}  // namespace detail

/// Thread-local switch for gradient recording.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

/// Disables recording for its lifetime (inference, frozen encoders).
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class BasicTensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    BasicTensor() = default;
    explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::ptrdiff_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Writable storage; intended for leaves (parameters, inputs) only.
    std::span<T> mutable_data() { return node_->data; }

    /// Gradient; all zeros if nothing was ever accumulated.
    std::span<const T> grad() const { return node_->ensure_grad(); }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return node_->inputs.empty() && !node_->backward; }
    const char* op_name() const { return node_->op; }

    /// Value of a single-element tensor.
    T item() const;
    /// Element at a full multi-index.
    T at(std::initializer_list<std::size_t> index) const;

    /// Deep copy detached from any graph.
    BasicTensor detach() const;

    const NodePtr& node() const noexcept { return node_; }

private:
    NodePtr node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace unoranic
