#include "unoranic/layers.hpp"

#include <cmath>

#include "unoranic/error.hpp"
#include "unoranic/rng.hpp"

namespace unoranic {

void PatchGrid::validate() const {
    if (patch == 0 || channels == 0 || image_h == 0 || image_w == 0) {
        throw ConfigError("patch grid extents must be positive");
    }
    if (image_h % patch != 0 || image_w % patch != 0) {
        throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                          " is not divisible into " + std::to_string(patch) + "x" + std::to_string(patch) + " patches");
    }
}

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, const PatchGrid& grid) {
    grid.validate();
    if (images.rank() != 4 || images.dim(1) != grid.channels || images.dim(2) != grid.image_h ||
        images.dim(3) != grid.image_w) {
        throw DimensionError("patchify expects [N," + std::to_string(grid.channels) + "," + std::to_string(grid.image_h) +
                             "," + std::to_string(grid.image_w) + "], got " + shape_str(images.shape()));
    }
    const std::size_t n = images.dim(0);
    const std::size_t p = grid.patch;
    auto x = reshape(images, {n, grid.channels, grid.grid_h(), p, grid.grid_w(), p});
    x = permute(x, {0, 2, 4, 3, 5, 1});
    return reshape(x, {n, grid.tokens(), grid.patch_dim()});
}

template <typename T>
BasicTensor<T> unpatchify(const BasicTensor<T>& tokens, const PatchGrid& grid) {
    grid.validate();
    if (tokens.rank() != 3 || tokens.dim(1) != grid.tokens() || tokens.dim(2) != grid.patch_dim()) {
        throw DimensionError("unpatchify expects [N," + std::to_string(grid.tokens()) + "," +
                             std::to_string(grid.patch_dim()) + "], got " + shape_str(tokens.shape()));
    }
    const std::size_t n = tokens.dim(0);
    const std::size_t p = grid.patch;
    auto x = reshape(tokens, {n, grid.grid_h(), grid.grid_w(), p, p, grid.channels});
    x = permute(x, {0, 5, 1, 3, 2, 4});
    return reshape(x, {n, grid.channels, grid.image_h, grid.image_w});
}

template <typename T>
BasicTensor<T> positional_embedding(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("positional embedding dim must be even, got " + std::to_string(dim));
    const std::size_t half = dim / 2;
    const std::size_t sines = (half + 1) / 2;
    std::vector<T> table(grid_h * grid_w * dim);
    auto fill = [&](T* out, double pos) {
        for (std::size_t j = 0; j < half; ++j) {
            const bool is_sin = j < sines;
            const std::size_t f = is_sin ? j : j - sines;
            const double omega = std::pow(10000.0, -static_cast<double>(f) / static_cast<double>(sines));
            out[j] = static_cast<T>(is_sin ? std::sin(pos * omega) : std::cos(pos * omega));
        }
    };
    for (std::size_t r = 0; r < grid_h; ++r) {
        for (std::size_t c = 0; c < grid_w; ++c) {
            T* row = table.data() + (r * grid_w + c) * dim;
            fill(row, static_cast<double>(r));
            fill(row + half, static_cast<double>(c));
        }
    }
    return BasicTensor<T>::from_data({grid_h * grid_w, dim}, std::move(table));
}

template <typename T>
BasicTensor<T>& ParameterStore<T>::add(const std::string& name, BasicTensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(tensor));
    return entries_.back().second;
}

template <typename T>
BasicTensor<T>* ParameterStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

template <typename T>
const BasicTensor<T>* ParameterStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
}

template <typename T>
BasicTensor<T>& ParameterStore<T>::get(const std::string& name) {
    auto* t = find(name);
    if (!t) throw ConfigError("unknown parameter " + name);
    return *t;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
}

template <typename T>
void ParameterStore<T>::set_requires_grad(bool on) {
    for (auto& [name, t] : entries_) t.set_requires_grad(on);
}

bool parameter_decays(const std::string& name) {
    constexpr std::string_view suffix = ".weight";
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
BasicTensor<T> init_xavier_uniform(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name) {
    rng::Rng gen(rng::combine(seed, rng::hash_string(name)));
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<T> values(in * out);
    for (auto& v : values) v = static_cast<T>(gen.uniform(-bound, bound));
    return BasicTensor<T>::from_data({in, out}, std::move(values), true);
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::uint64_t seed)
    : weight_name(name + ".weight"), bias_name(name + ".bias") {
    weight = store.add(weight_name, init_xavier_uniform<T>(in, out, seed, weight_name));
    bias = store.add(bias_name, BasicTensor<T>::zeros({out}, true));
}

template <typename T>
BasicTensor<T> Linear<T>::operator()(const BasicTensor<T>& x) const {
    return add(matmul(x, weight), bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    gamma = store.add(name + ".gamma", BasicTensor<T>::full({dim}, T(1), true));
    beta = store.add(name + ".beta", BasicTensor<T>::zeros({dim}, true));
}

template <typename T>
BasicTensor<T> LayerNorm<T>::operator()(const BasicTensor<T>& x) const {
    return layernorm(x, gamma, beta, eps);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                      std::size_t heads, std::uint64_t seed)
    : dim_(dim), heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
        throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide embedding dim (" +
                          std::to_string(dim) + ")");
    }
    norm1 = LayerNorm<T>(store, prefix + ".norm1", dim);
    qkv = Linear<T>(store, prefix + ".attn.qkv", dim, 3 * dim, seed);
    proj = Linear<T>(store, prefix + ".attn.proj", dim, dim, seed);
    norm2 = LayerNorm<T>(store, prefix + ".norm2", dim);
    fc1 = Linear<T>(store, prefix + ".mlp.fc1", dim, kMlpRatio * dim, seed);
    fc2 = Linear<T>(store, prefix + ".mlp.fc2", kMlpRatio * dim, dim, seed);
}

template <typename T>
BasicTensor<T> TransformerBlock<T>::operator()(const BasicTensor<T>& x, BasicTensor<T>* attention) const {
    if (x.rank() != 3 || x.dim(2) != dim_) {
        throw DimensionError("transformer block of width " + std::to_string(dim_) + " got input " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0);
    const std::size_t t = x.dim(1);
    const std::size_t dh = dim_ / heads_;

    // [N,T,3d] -> [3,N,H,T,dh]
    auto packed = reshape(qkv(norm1(x)), {n, t, 3, heads_, dh});
    packed = permute(packed, {2, 0, 3, 1, 4});
    auto part = [&](std::size_t i) { return reshape(narrow(packed, 0, i, 1), {n, heads_, t, dh}); };
    auto q = scale(part(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    auto k = part(1);
    auto v = part(2);

    auto weights = softmax_lastdim(matmul(q, transpose(k, 2, 3)));
    if (attention) *attention = weights;
    auto context = permute(matmul(weights, v), {0, 2, 1, 3});
    auto h = add(x, proj(reshape(context, {n, t, dim_})));
    return add(h, fc2(gelu(fc1(norm2(h)))));
}

#define UNORANIC_INSTANTIATE_LAYERS(T)                                                                     \
    template BasicTensor<T> patchify(const BasicTensor<T>&, const PatchGrid&);                             \
    template BasicTensor<T> unpatchify(const BasicTensor<T>&, const PatchGrid&);                           \
    template BasicTensor<T> positional_embedding<T>(std::size_t, std::size_t, std::size_t);               \
    template BasicTensor<T> init_xavier_uniform<T>(std::size_t, std::size_t, std::uint64_t, const std::string&); \
    template class ParameterStore<T>;                                                                      \
    template class Linear<T>;                                                                              \
    template class LayerNorm<T>;                                                                           \
    template class TransformerBlock<T>;

UNORANIC_INSTANTIATE_LAYERS(float)
UNORANIC_INSTANTIATE_LAYERS(double)

#undef UNORANIC_INSTANTIATE_LAYERS

}  // namespace unoranic
