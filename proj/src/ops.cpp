#include "unoranic/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include "unoranic/error.hpp"

namespace unoranic {

namespace {

template <typename T>
using Node = detail::Node<T>;

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
    for (const T v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
}

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           std::function<void(Node<T>&)> backward_rule) {
    check_finite(data, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    node->seq = detail::next_sequence();
    bool track = false;
    if (GradMode::enabled()) {
        for (const auto* in : inputs) track = track || in->requires_grad();
    }
    if (track) {
        node->requires_grad = true;
        for (const auto* in : inputs) node->inputs.push_back(in->node());
        node->backward = std::move(backward_rule);
    }
    return BasicTensor<T>(std::move(node));
}

/// Gradient buffer of input i, or nullptr when that input needs none.
template <typename T>
T* input_grad(Node<T>& self, std::size_t i) {
    auto& in = *self.inputs[i];
    return in.requires_grad ? in.ensure_grad().data() : nullptr;
}

/// Row-major element strides of `in` aligned to the trailing axes of `out`;
/// broadcast or missing axes get stride 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = in.size(); i-- > 0;) {
        if (in[i] != 1) strides[i + offset] = s;
        s *= in[i];
    }
    return strides;
}

/// Visits every flat output index with the matching offsets into two strided
/// operands. Iteration order is the flat row-major order of `out`.
template <typename F>
void for_each_index(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t rank = out.size();
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0;
    std::size_t ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            ia += sa[ax];
            ib += sb[ax];
            if (idx[ax] < out[ax]) break;
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
BasicTensor<T> binary(const char* name, BinaryKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    Shape out = broadcast_shapes(a.shape(), b.shape(), name);
    const bool same = a.shape() == b.shape();
    // b repeats along the leading axes of a (bias rows, positional tables).
    const bool tiled_b = !same && a.shape() == out && b.rank() <= a.rank() &&
                         std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - static_cast<std::ptrdiff_t>(b.rank()));
    const std::size_t period = b.numel();
    auto sa = broadcast_strides(a.shape(), out);
    auto sb = broadcast_strides(b.shape(), out);
    std::vector<T> y(shape_numel(out));
    const T* A = a.data().data();
    const T* B = b.data().data();

    auto run = [&](auto fn) {
        if (same) {
            for (std::size_t o = 0; o < y.size(); ++o) y[o] = fn(A[o], B[o]);
        } else if (tiled_b) {
            for (std::size_t o0 = 0; o0 < y.size(); o0 += period)
                for (std::size_t j = 0; j < period; ++j) y[o0 + j] = fn(A[o0 + j], B[j]);
        } else {
            for_each_index(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = fn(A[ia], B[ib]); });
        }
    };
    switch (kind) {
        case BinaryKind::add: run([](T u, T v) { return u + v; }); break;
        case BinaryKind::sub: run([](T u, T v) { return u - v; }); break;
        case BinaryKind::mul: run([](T u, T v) { return u * v; }); break;
    }

    auto rule = [kind, out, same, tiled_b, period, sa = std::move(sa), sb = std::move(sb)](Node<T>& self) {
        const T* g = self.grad.data();
        const T* A = self.inputs[0]->data.data();
        const T* B = self.inputs[1]->data.data();
        T* ga = input_grad(self, 0);
        T* gb = input_grad(self, 1);
        auto visit = [&](std::size_t o, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::add:
                    if (ga) ga[ia] += g[o];
                    if (gb) gb[ib] += g[o];
                    break;
                case BinaryKind::sub:
                    if (ga) ga[ia] += g[o];
                    if (gb) gb[ib] -= g[o];
                    break;
                case BinaryKind::mul:
                    if (ga) ga[ia] += g[o] * B[ib];
                    if (gb) gb[ib] += g[o] * A[ia];
                    break;
            }
        };
        const std::size_t n = self.data.size();
        if (same) {
            for (std::size_t o = 0; o < n; ++o) visit(o, o, o);
        } else if (tiled_b) {
            for (std::size_t o0 = 0; o0 < n; o0 += period)
                for (std::size_t j = 0; j < period; ++j) visit(o0 + j, o0 + j, j);
        } else {
            for_each_index(out, sa, sb, visit);
        }
    };
    return make_result<T>(name, std::move(out), std::move(y), {&a, &b}, std::move(rule));
}

template <typename T>
BasicTensor<T> unary(const char* name, const BasicTensor<T>& x, T (*fwd)(T, T), T (*deriv)(T, T, T), T param) {
    const auto X = x.data();
    std::vector<T> y(X.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(X[i], param);
    auto rule = [deriv, param](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        const auto& X = self.inputs[0]->data;
        for (std::size_t i = 0; i < X.size(); ++i) gx[i] += self.grad[i] * deriv(X[i], self.data[i], param);
    };
    return make_result<T>(name, x.shape(), std::move(y), {&x}, std::move(rule));
}

// C += A[m,k] * B[k,n]; the inner loop is a contiguous axpy, which the
// compiler vectorizes. Each output sums its k products in increasing p order.
template <typename T>
void transpose_into(const T* src, T* dst, std::size_t rows, std::size_t cols);

template <typename T>
void gemm_rows(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* c = C + i * n;
        const T* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[p];
            const T* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// Narrow outputs vectorize poorly, so those are computed as C^T += B^T A^T,
// which performs the same multiply-adds in the same order per element.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
    constexpr std::size_t kNarrow = 16;
    if (n >= kNarrow || m <= n) {
        gemm_rows(A, B, C, m, k, n);
        return;
    }
    std::vector<T> at(m * k);
    std::vector<T> bt(k * n);
    std::vector<T> ct(n * m);
    transpose_into(A, at.data(), m, k);
    transpose_into(B, bt.data(), k, n);
    transpose_into(C, ct.data(), m, n);
    gemm_rows(bt.data(), at.data(), ct.data(), n, k, m);
    transpose_into(ct.data(), C, n, m);
}

// C[k,n] += A[m,k]^T * D[m,n]
template <typename T>
void gemm_tn(const T* A, const T* D, T* C, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<T> at(m * k);
    transpose_into(A, at.data(), m, k);
    gemm_nn(at.data(), D, C, k, m, n);
}

template <typename T>
void transpose_into(const T* src, T* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

struct RowSplit {
    std::size_t outer;
    std::size_t length;
    std::size_t inner;
};

RowSplit split_at(const Shape& shape, std::size_t axis) {
    RowSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

// Vectorized transcendental kernels. Eigen's float exp/erf are accurate to a
// few ulp; the double versions fall back to the scalar libm routines.
// Work goes through aligned fixed-size blocks (tail zero-padded): a Map over
// a misaligned buffer would send its head through the scalar path, making
// results depend on heap addresses.
constexpr std::size_t kBlock = 16;

template <typename T>
using Block = Eigen::Array<T, static_cast<int>(kBlock), 1>;

template <typename T, typename F>
void blocked(std::size_t n, F&& f) {
    for (std::size_t i = 0; i < n; i += kBlock) f(i, std::min(kBlock, n - i));
}

template <typename T>
Block<T> load(const T* p, std::size_t len) {
    Block<T> b = Block<T>::Zero();
    std::copy(p, p + len, b.data());
    return b;
}

template <typename T>
void store(const Block<T>& b, T* p, std::size_t len) {
    std::copy(b.data(), b.data() + len, p);
}

template <typename T>
void exp_inplace(T* v, std::size_t n) {
    blocked<T>(n, [&](std::size_t i, std::size_t len) {
        const Block<T> x = load(v + i, len);
        store<T>(x.exp(), v + i, len);
    });
}

template <typename T>
void gelu_forward(const T* x, T* y, std::size_t n) {
    blocked<T>(n, [&](std::size_t i, std::size_t len) {
        const Block<T> X = load(x + i, len);
        store<T>(T(0.5) * X * (T(1) + (X * T(1.0 / std::numbers::sqrt2)).erf()), y + i, len);
    });
}

// gx += g * (Phi(x) + x * phi(x))
template <typename T>
void gelu_backward(const T* x, const T* g, T* gx, std::size_t n) {
    const T inv_sqrt_2pi = T(1.0 / std::sqrt(2.0 * std::numbers::pi));
    blocked<T>(n, [&](std::size_t i, std::size_t len) {
        const Block<T> X = load(x + i, len);
        const Block<T> G = load(g + i, len);
        const Block<T> d = T(0.5) * (T(1) + (X * T(1.0 / std::numbers::sqrt2)).erf()) +
                           X * (T(-0.5) * X.square()).exp() * inv_sqrt_2pi;
        for (std::size_t k = 0; k < len; ++k) gx[i + k] += G[static_cast<Eigen::Index>(k)] * d[static_cast<Eigen::Index>(k)];
    });
}

template <typename T>
T scale_fwd(T x, T s) {
    return x * s;
}

template <typename T>
T scale_deriv(T, T, T s) {
    return s;
}

template <typename T>
T power_fwd(T x, T p) {
    return std::pow(x, p);
}

template <typename T>
T power_deriv(T x, T, T p) {
    return p == T(0) ? T(0) : p * std::pow(x, p - T(1));
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("add", BinaryKind::add, a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("sub", BinaryKind::sub, a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary("mul", BinaryKind::mul, a, b);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    return unary<T>("scale", x, &scale_fwd<T>, &scale_deriv<T>, factor);
}

template <typename T>
BasicTensor<T> power(const BasicTensor<T>& x, T exponent) {
    return unary<T>("power", x, &power_fwd<T>, &power_deriv<T>, exponent);
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
    std::vector<T> y(x.numel());
    gelu_forward(x.data().data(), y.data(), y.size());
    auto rule = [](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        gelu_backward(self.inputs[0]->data.data(), self.grad.data(), gx, self.grad.size());
    };
    return make_result<T>("gelu", x.shape(), std::move(y), {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(-2);
    const std::size_t k = a.dim(-1);
    const std::size_t n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw DimensionError("matmul: inner extents differ in " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
    const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shapes(batch_a, batch_b, "matmul");
    Shape out = batch;
    out.push_back(m);
    out.push_back(n);

    // Per-batch matrix offsets, in row-major batch order.
    const auto sa = broadcast_strides(batch_a, batch);
    const auto sb = broadcast_strides(batch_b, batch);
    std::vector<std::size_t> off_a;
    std::vector<std::size_t> off_b;
    if (batch.empty()) {
        off_a.push_back(0);
        off_b.push_back(0);
    } else {
        for_each_index(batch, sa, sb, [&](std::size_t, std::size_t ia, std::size_t ib) {
            off_a.push_back(ia * m * k);
            off_b.push_back(ib * k * n);
        });
    }
    // A stack of row blocks times one shared matrix collapses into a single product.
    const bool flat = batch_b.empty() || shape_numel(batch_b) == 1;
    const std::size_t batches = off_a.size();
    if (flat && shape_numel(batch_a) == batches) {
        off_a.assign(1, 0);
        off_b.assign(1, 0);
    }
    // Rows per product: a collapsed stack multiplies batches*m rows at once.
    const std::size_t rows = off_a.size() == batches ? m : batches * m;

    std::vector<T> y(shape_numel(out), T(0));
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (std::size_t i = 0; i < off_a.size(); ++i) {
        gemm_nn(A + off_a[i], B + off_b[i], y.data() + i * rows * n, rows, k, n);
    }

    auto rule = [m = rows, k, n, off_a = std::move(off_a), off_b = std::move(off_b)](Node<T>& self) {
        const T* g = self.grad.data();
        const T* A = self.inputs[0]->data.data();
        const T* B = self.inputs[1]->data.data();
        T* ga = input_grad(self, 0);
        T* gb = input_grad(self, 1);
        std::vector<T> bt(k * n);
        for (std::size_t i = 0; i < off_a.size(); ++i) {
            const T* gi = g + i * m * n;
            if (ga) {
                transpose_into(B + off_b[i], bt.data(), k, n);
                gemm_nn(gi, bt.data(), ga + off_a[i], m, n, k);
            }
            if (gb) gemm_tn(A + off_a[i], gi, gb + off_b[i], m, k, n);
        }
    };
    return make_result<T>("matmul", std::move(out), std::move(y), {&a, &b}, std::move(rule));
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
    if (x.rank() == 0) throw DimensionError("softmax_lastdim needs rank >= 1");
    const std::size_t d = x.dim(-1);
    const std::size_t rows = x.numel() / d;
    const T* X = x.data().data();
    std::vector<T> y(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X + r * d;
        T* yr = y.data() + r * d;
        const T mx = *std::max_element(xr, xr + d);
        for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] - mx;
    }
    exp_inplace(y.data(), y.size());
    for (std::size_t r = 0; r < rows; ++r) {
        T* yr = y.data() + r * d;
        T total = 0;
        for (std::size_t j = 0; j < d; ++j) total += yr[j];
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < d; ++j) yr[j] *= inv;
    }
    auto rule = [d, rows](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = self.data.data() + r * d;
            const T* gr = self.grad.data() + r * d;
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            T* out = gx + r * d;
            for (std::size_t j = 0; j < d; ++j) out[j] += yr[j] * (gr[j] - dot);
        }
    };
    return make_result<T>("softmax_lastdim", x.shape(), std::move(y), {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta, T eps) {
    if (x.rank() == 0) throw DimensionError("layernorm needs rank >= 1");
    const std::size_t d = x.dim(-1);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layernorm affine shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                             " do not match feature extent of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    const T* X = x.data().data();
    const T* G = gamma.data().data();
    const T* Bt = beta.data().data();
    std::vector<T> y(x.numel());
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mu) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * G[j] + Bt[j];
        }
    }
    auto rule = [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        T* gx = input_grad(self, 0);
        T* gg = input_grad(self, 1);
        T* gb = input_grad(self, 2);
        const T* G = self.inputs[1]->data.data();
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = self.grad.data() + r * d;
            const T* hr = xhat.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
                if (gg) gg[j] += gr[j] * hr[j];
                if (gb) gb[j] += gr[j];
            }
            if (!gx) continue;
            T mean_dh = 0;
            T mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
                dxhat[j] = gr[j] * G[j];
                mean_dh += dxhat[j];
                mean_dh_h += dxhat[j] * hr[j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            T* out = gx + r * d;
            for (std::size_t j = 0; j < d; ++j) out[j] += rstd[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
        }
    };
    return make_result<T>("layernorm", x.shape(), std::move(y), {&x, &gamma, &beta}, std::move(rule));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T total = 0;
    for (const T v : x.data()) total += v;
    auto rule = [](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        const T g = self.grad[0];
        const std::size_t n = self.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    };
    return make_result<T>("sum", {}, std::vector<T>{total}, {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    T total = 0;
    for (const T v : x.data()) total += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    auto rule = [inv](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        const T g = self.grad[0] * inv;
        const std::size_t n = self.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    };
    return make_result<T>("mean", {}, std::vector<T>{total * inv}, {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> mean_dim(const BasicTensor<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("mean_dim axis out of range for " + shape_str(x.shape()));
    const RowSplit s = split_at(x.shape(), axis);
    Shape out = x.shape();
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    const T inv = T(1) / static_cast<T>(s.length);
    const T* X = x.data().data();
    std::vector<T> y(s.outer * s.inner, T(0));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.length; ++l)
            for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += X[(o * s.length + l) * s.inner + i];
    for (auto& v : y) v *= inv;
    auto rule = [s, inv](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t l = 0; l < s.length; ++l)
                for (std::size_t i = 0; i < s.inner; ++i)
                    gx[(o * s.length + l) * s.inner + i] += self.grad[o * s.inner + i] * inv;
    };
    return make_result<T>("mean_dim", std::move(out), std::move(y), {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    }
    const T* P = pred.data().data();
    const T* Q = target.data().data();
    const std::size_t n = pred.numel();
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (P[i] - Q[i]) * (P[i] - Q[i]);
    const T inv = T(1) / static_cast<T>(n);
    auto rule = [n, inv](Node<T>& self) {
        const T* P = self.inputs[0]->data.data();
        const T* Q = self.inputs[1]->data.data();
        T* gp = input_grad(self, 0);
        T* gq = input_grad(self, 1);
        const T g = self.grad[0] * T(2) * inv;
        for (std::size_t i = 0; i < n; ++i) {
            const T diff = g * (P[i] - Q[i]);
            if (gp) gp[i] += diff;
            if (gq) gq[i] -= diff;
        }
    };
    return make_result<T>("mse", {}, std::vector<T>{total * inv}, {&pred, &target}, std::move(rule));
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects [N,K] logits, got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0);
    const std::size_t classes = logits.dim(1);
    if (labels.size() != rows) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                             " rows");
    }
    for (const int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw DimensionError("cross_entropy: label " + std::to_string(l) + " outside [0," +
                                 std::to_string(classes) + ")");
        }
    }
    const T* X = logits.data().data();
    std::vector<T> probs(logits.numel());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X + r * classes;
        T* pr = probs.data() + r * classes;
        const T mx = *std::max_element(xr, xr + classes);
        T z = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            pr[j] = std::exp(xr[j] - mx);
            z += pr[j];
        }
        for (std::size_t j = 0; j < classes; ++j) pr[j] /= z;
        total += -(xr[labels[r]] - mx - std::log(z));
    }
    const T inv = T(1) / static_cast<T>(rows);
    std::vector<int> lab(labels.begin(), labels.end());
    auto rule = [rows, classes, inv, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        const T g = self.grad[0] * inv;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < classes; ++j) {
                const T onehot = static_cast<std::size_t>(lab[r]) == j ? T(1) : T(0);
                gx[r * classes + j] += g * (probs[r * classes + j] - onehot);
            }
        }
    };
    return make_result<T>("cross_entropy", {}, std::vector<T>{total * inv}, {&logits}, std::move(rule));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
    }
    std::vector<T> y(x.data().begin(), x.data().end());
    auto rule = [](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    };
    return make_result<T>("reshape", std::move(shape), std::move(y), {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, std::span<const std::size_t> order) {
    const std::size_t rank = x.rank();
    if (order.size() != rank) throw DimensionError("permute order has wrong length for " + shape_str(x.shape()));
    std::vector<bool> seen(rank, false);
    for (auto o : order) {
        if (o >= rank || seen[o]) throw DimensionError("permute order is not a permutation of the axes");
        seen[o] = true;
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
    Shape out(rank);
    std::vector<std::size_t> sa(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out[i] = x.shape()[order[i]];
        sa[i] = in_strides[order[i]];
    }
    const std::vector<std::size_t> none(rank, 0);
    const T* X = x.data().data();
    std::vector<T> y(x.numel());
    for_each_index(out, sa, none, [&](std::size_t o, std::size_t ia, std::size_t) { y[o] = X[ia]; });
    auto rule = [out, sa, none](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        const T* g = self.grad.data();
        for_each_index(out, sa, none, [&](std::size_t o, std::size_t ia, std::size_t) { gx[ia] += g[o]; });
    };
    return make_result<T>("permute", out, std::move(y), {&x}, std::move(rule));
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x, std::size_t axis0, std::size_t axis1) {
    if (axis0 >= x.rank() || axis1 >= x.rank()) throw DimensionError("transpose axis out of range for " + shape_str(x.shape()));
    std::vector<std::size_t> order(x.rank());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::swap(order[axis0], order[axis1]);
    return permute(x, std::span<const std::size_t>(order));
}

template <typename T>
BasicTensor<T> narrow(const BasicTensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank() || length == 0 || start + length > x.shape()[axis]) {
        throw DimensionError("narrow [" + std::to_string(start) + "," + std::to_string(start + length) + ") on axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    const RowSplit s = split_at(x.shape(), axis);
    Shape out = x.shape();
    out[axis] = length;
    const T* X = x.data().data();
    std::vector<T> y(s.outer * length * s.inner);
    const std::size_t block = length * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = X + (o * s.length + start) * s.inner;
        std::copy(src, src + block, y.data() + o * block);
    }
    auto rule = [s, start, block](Node<T>& self) {
        T* gx = input_grad(self, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < s.outer; ++o) {
            T* dst = gx + (o * s.length + start) * s.inner;
            const T* g = self.grad.data() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
        }
    };
    return make_result<T>("narrow", std::move(out), std::move(y), {&x}, std::move(rule));
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw DimensionError("backward needs a scalar loss");
    }
    auto* root = loss.node().get();
    if (root->consumed) throw StateError("backward called twice on the same graph; run a new forward pass");
    if (!root->requires_grad) throw StateError("loss does not depend on any tensor that requires a gradient");

    // Collect every reachable node that participates in differentiation.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

    root->ensure_grad()[0] += T(1);
    for (Node<T>* n : order) {
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // Interior nodes are spent: drop their rules, inputs and scratch gradients.
    // Released inputs stay alive in `hold` until every node has been visited.
    std::vector<std::shared_ptr<Node<T>>> hold;
    for (Node<T>* n : order) {
        if (n->backward) {
            n->backward = nullptr;
            for (auto& in : n->inputs) hold.push_back(std::move(in));
            n->inputs.clear();
            n->grad.clear();
            n->consumed = true;
        }
    }
    root->consumed = true;
}

#define UNORANIC_INSTANTIATE_OPS(T)                                                                      \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                             \
    template BasicTensor<T> power(const BasicTensor<T>&, T);                                             \
    template BasicTensor<T> gelu(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                                      \
    template BasicTensor<T> layernorm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                  \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> mean_dim(const BasicTensor<T>&, std::size_t);                                \
    template BasicTensor<T> mse(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);                  \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                       \
    template BasicTensor<T> permute(const BasicTensor<T>&, std::span<const std::size_t>);                \
    template BasicTensor<T> transpose(const BasicTensor<T>&, std::size_t, std::size_t);                  \
    template BasicTensor<T> narrow(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t);        \
    template void backward(const BasicTensor<T>&);

UNORANIC_INSTANTIATE_OPS(float)
UNORANIC_INSTANTIATE_OPS(double)

#undef UNORANIC_INSTANTIATE_OPS

}  // namespace unoranic
