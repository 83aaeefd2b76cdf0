#pragma once

// Differentiable tensor operations. Binary elementwise ops broadcast with
// trailing-dimension alignment; every forward result is checked for NaN/Inf
// and raises NumericError naming the op.

#include <cstddef>
#include <span>
#include <vector>

#include "unoranic/tensor.hpp"

namespace unoranic {

/// Broadcast result shape of two operands; DimensionError names both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op = "broadcast");

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> power(const BasicTensor<T>& x, T exponent);
/// Exact GELU, x * Phi(x) with the Gaussian CDF written through erf.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& x);

/// Batched matrix product over the last two axes; leading axes broadcast.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                         T eps = T(1e-6));

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
/// Mean over one axis; the axis is removed from the result.
template <typename T> BasicTensor<T> mean_dim(const BasicTensor<T>& x, std::size_t axis);

template <typename T> BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target);
/// Mean softmax cross-entropy of logits [N,K] against integer labels.
template <typename T> BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

// Shape ops copy their data (no views).
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> order);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& x, std::initializer_list<std::size_t> order) {
    return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x, std::size_t axis0, std::size_t axis1);
/// Slice [start, start+length) along one axis.
template <typename T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Reverse pass from a scalar loss. Gradients accumulate into every leaf that
/// requires them; the recorded graph is released afterwards, and a second call
/// on the same loss raises StateError.
template <typename T> void backward(const BasicTensor<T>& loss);

}  // namespace unoranic
