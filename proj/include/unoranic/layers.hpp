#pragma once

// Vision Transformer building blocks assembled from tensor ops.

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unoranic/ops.hpp"
#include "unoranic/tensor.hpp"

namespace unoranic {

/// Partition of an H x W x C image into square non-overlapping p x p patches.
struct PatchGrid {
    std::size_t image_h = 0;
    std::size_t image_w = 0;
    std::size_t channels = 1;
    std::size_t patch = 1;

    std::size_t grid_h() const noexcept { return image_h / patch; }
    std::size_t grid_w() const noexcept { return image_w / patch; }
    std::size_t tokens() const noexcept { return grid_h() * grid_w(); }
    std::size_t patch_dim() const noexcept { return patch * patch * channels; }

    /// Throws ConfigError unless both image extents are multiples of the patch size.
    void validate() const;
};

/// [N,C,H,W] -> [N,T,p*p*C]. Token t = r*grid_w + c holds its sub-image in
/// (row, col, channel) order.
template <typename T> BasicTensor<T> patchify(const BasicTensor<T>& images, const PatchGrid& grid);

/// Exact inverse of patchify: [N,T,p*p*C] -> [N,C,H,W].
template <typename T> BasicTensor<T> unpatchify(const BasicTensor<T>& tokens, const PatchGrid& grid);

/// Fixed 2-D sine-cosine table [grid_h*grid_w, dim]. The first dim/2 channels
/// encode the row coordinate and the rest the column coordinate; within each
/// half, sines come first, then cosines, over the frequencies 10000^(-i/F).
/// Not trainable. Throws ConfigError for odd dim.
template <typename T> BasicTensor<T> positional_embedding(std::size_t grid_h, std::size_t grid_w, std::size_t dim);

/// Ordered, uniquely named collection of trainable tensors.
template <typename T>
class ParameterStore {
public:
    /// Registers a parameter; duplicate names are rejected with ConfigError.
    BasicTensor<T>& add(const std::string& name, BasicTensor<T> tensor);

    BasicTensor<T>* find(const std::string& name);
    const BasicTensor<T>* find(const std::string& name) const;
    BasicTensor<T>& get(const std::string& name);

    std::vector<std::pair<std::string, BasicTensor<T>>>& entries() noexcept { return entries_; }
    const std::vector<std::pair<std::string, BasicTensor<T>>>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    void set_requires_grad(bool on);

private:
    std::vector<std::pair<std::string, BasicTensor<T>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Weight decay applies to matrices only; biases and layernorm affines are exempt.
bool parameter_decays(const std::string& name);

/// [in,out] matrix, uniform in +-sqrt(6/(in+out)). The stream is keyed by
/// (seed, name) so initialization does not depend on construction order.
template <typename T>
BasicTensor<T> init_xavier_uniform(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name);

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);

    BasicTensor<T> operator()(const BasicTensor<T>& x) const;

    std::string weight_name;
    std::string bias_name;
    BasicTensor<T> weight;  // [in, out]
    BasicTensor<T> bias;    // [out]
};

template <typename T>
class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim);

    BasicTensor<T> operator()(const BasicTensor<T>& x) const;

    BasicTensor<T> gamma;
    BasicTensor<T> beta;
    T eps = T(1e-6);
};

/// Pre-norm transformer block:
///   h = x + proj(MHSA(LN1(x)));  out = h + fc2(GELU(fc1(LN2(h))))
/// with scaled dot-product attention (scale 1/sqrt(dim/heads)) and MLP width 4*dim.
template <typename T>
class TransformerBlock {
public:
    static constexpr std::size_t kMlpRatio = 4;

    TransformerBlock() = default;
    TransformerBlock(ParameterStore<T>& store, const std::string& prefix, std::size_t dim, std::size_t heads,
                     std::uint64_t seed);

    /// x: [N,T,dim]. When `attention` is non-null it receives the softmax
    /// weights [N,heads,T,T].
    BasicTensor<T> operator()(const BasicTensor<T>& x, BasicTensor<T>* attention = nullptr) const;

    std::size_t dim() const noexcept { return dim_; }
    std::size_t heads() const noexcept { return heads_; }

    LayerNorm<T> norm1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNorm<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;

private:
    std::size_t dim_ = 0;
    std::size_t heads_ = 1;
};

}  // namespace unoranic
