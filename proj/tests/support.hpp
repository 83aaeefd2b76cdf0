#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "unoranic/ops.hpp"
#include "unoranic/rng.hpp"
#include "unoranic/tensor.hpp"

namespace testing {

using unoranic::Shape;
using unoranic::Tensor;
using unoranic::Tensor64;

template <typename T = double>
unoranic::BasicTensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0,
                                       bool requires_grad = false) {
    unoranic::rng::Rng gen(seed);
    std::vector<T> v(unoranic::shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(gen.uniform(lo, hi));
    return unoranic::BasicTensor<T>::from_data(shape, std::move(v), requires_grad);
}

inline std::vector<float> random_pixels(std::size_t n, std::uint64_t seed) {
    unoranic::rng::Rng gen(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(gen.uniform());
    return v;
}

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst;  // "name[index]" of the worst element
    std::size_t checked = 0;
};

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Central finite differences (step h) against reverse-mode gradients for
/// every element of every leaf. The scalar objective is sum(forward() * R)
/// with a fixed random R, so every output element contributes.
template <typename F>
GradCheck grad_check(std::vector<std::pair<std::string, Tensor64>> leaves, F&& forward, double h = 1e-5) {
    Shape out_shape;
    {
        unoranic::NoGradGuard guard;
        out_shape = forward().shape();
    }
    const auto weights = random_tensor<double>(out_shape.empty() ? Shape{} : out_shape, 0xC0FFEE, -1.0, 1.0);
    auto objective = [&] { return unoranic::sum(unoranic::mul(forward(), weights)); };

    for (auto& [name, t] : leaves) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    unoranic::backward(objective());

    GradCheck result;
    for (auto& [name, t] : leaves) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            double plus = 0.0;
            double minus = 0.0;
            {
                unoranic::NoGradGuard guard;
                data[i] = saved + h;
                plus = objective().item();
                data[i] = saved - h;
                minus = objective().item();
            }
            data[i] = saved;
            const double err = rel_err(analytic[i], (plus - minus) / (2.0 * h));
            ++result.checked;
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("unoranic_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
