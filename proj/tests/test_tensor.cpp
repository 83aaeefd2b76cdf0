#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "unoranic/error.hpp"
#include "unoranic/layers.hpp"
#include "unoranic/ops.hpp"

using namespace unoranic;
using testing::grad_check;
using testing::random_tensor;

TEST_CASE("tensor construction validates shape against data") {
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, std::vector<float>(5)), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({2, 0}, {}), DimensionError);
    const auto t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(t.numel() == 4);
    CHECK(t.at({1, 0}) == 3.0f);
    CHECK(t.dim(-1) == 2);
    CHECK(Tensor::scalar(5.0f).rank() == 0);
}

TEST_CASE("grad is allocated with the data shape") {
    auto t = Tensor::zeros({3, 2}, true);
    CHECK(t.grad().size() == 6);
    for (const float g : t.grad()) CHECK(g == 0.0f);
}

TEST_CASE("matmul small cases") {
    const auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const auto b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    const auto c = matmul(eye, b);
    CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{3, 4, 5, 6});
    CHECK(matmul(Tensor::from_data({1, 1}, {2}), Tensor::from_data({1, 1}, {3})).item() == 6.0f);
}

TEST_CASE("matmul mismatch names both shapes") {
    try {
        (void)matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("matmul grad of sum equals row sums of b") {
    auto a = random_tensor({3, 4}, 1, -2, 2, true);
    const auto b = random_tensor({4, 2}, 2);
    backward(sum(matmul(a, b)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            const double expect = b.at({k, 0}) + b.at({k, 1});
            CHECK(a.grad()[i * 4 + k] == doctest::Approx(expect).epsilon(1e-12));
        }
    auto a2 = random_tensor({3, 4}, 1);
    const auto r = grad_check({{"a", a2}}, [&] { return matmul(a2, b); });
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("batched matmul broadcasts leading axes") {
    auto a = random_tensor({2, 3, 4}, 3);
    auto b = random_tensor({4, 5}, 4);
    const auto c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    auto b3 = random_tensor({2, 4, 5}, 5);
    const auto r = grad_check({{"a", a}, {"b", b3}}, [&] { return matmul(a, b3); });
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("elementwise identities") {
    const auto x = random_tensor({2, 3}, 6);
    const auto y = add(x, Tensor64::zeros({2, 3}));
    CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    CHECK(gelu(Tensor64::scalar(0.0)).item() == 0.0);
    CHECK_THROWS_AS((void)add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("gelu gradient at fixed points") {
    auto x = Tensor64::from_data({4}, {-2.0, -0.5, 0.5, 2.0});
    const auto r = grad_check({{"x", x}}, [&] { return gelu(x); });
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("elementwise gradients with broadcasting") {
    auto a = random_tensor({2, 3, 4}, 7);
    auto b = random_tensor({4}, 8);
    auto c = random_tensor({3, 1}, 9);
    CHECK(grad_check({{"a", a}, {"b", b}}, [&] { return add(a, b); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"a", a}, {"c", c}}, [&] { return sub(a, c); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"a", a}, {"b", b}}, [&] { return mul(a, b); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"a", a}}, [&] { return scale(a, 0.37); }).max_rel_err < 1e-4);
    auto pos = random_tensor({2, 3}, 10, 0.5, 2.0);
    CHECK(grad_check({{"p", pos}}, [&] { return power(pos, 2.5); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"a", a}}, [&] { return gelu(a); }).max_rel_err < 1e-4);
}

TEST_CASE("softmax values and stability") {
    const auto s = softmax_lastdim(Tensor64::from_data({3}, {0, 0, 0}));
    for (const double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto big = softmax_lastdim(Tensor64::from_data({2}, {1000, 0}));
    CHECK(std::abs(big.data()[0] - 1.0) < 1e-12);
    CHECK(std::abs(big.data()[1]) < 1e-12);
    auto x = random_tensor({5}, 11);
    CHECK(grad_check({{"x", x}}, [&] { return softmax_lastdim(x); }).max_rel_err < 1e-4);
    auto xs = random_tensor({2, 3, 5}, 12);
    CHECK(grad_check({{"x", xs}}, [&] { return softmax_lastdim(xs); }).max_rel_err < 1e-4);
}

TEST_CASE("layernorm special cases and gradient") {
    const auto ones = Tensor64::full({4}, 1.0);
    const auto zeros = Tensor64::zeros({4});
    const auto flat = layernorm(Tensor64::full({2, 4}, 3.0), ones, zeros);
    for (const double v : flat.data()) CHECK(v == 0.0);
    const auto c = layernorm(random_tensor({2, 4}, 13), zeros, Tensor64::full({4}, 0.7));
    for (const double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

    auto x = random_tensor({2, 3, 4}, 14);
    auto g = random_tensor({4}, 15);
    auto b = random_tensor({4}, 16);
    CHECK(grad_check({{"x", x}, {"g", g}, {"b", b}}, [&] { return layernorm(x, g, b); }).max_rel_err < 1e-4);
}

TEST_CASE("mse values and gradient") {
    const auto a = Tensor64::from_data({2}, {1, 1});
    CHECK(mse(a, Tensor64::zeros({2})).item() == 1.0);
    CHECK(mse(a, a).item() == 0.0);
    CHECK_THROWS_AS((void)mse(a, Tensor64::zeros({3})), DimensionError);
    auto p = random_tensor({2, 3, 3}, 17);
    auto t = random_tensor({2, 3, 3}, 18);
    CHECK(grad_check({{"p", p}, {"t", t}}, [&] { return mse(p, t); }).max_rel_err < 1e-4);
}

TEST_CASE("reductions, shape ops and cross entropy gradients") {
    auto x = random_tensor({2, 3, 4}, 19);
    CHECK(grad_check({{"x", x}}, [&] { return mean(x); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"x", x}}, [&] { return mean_dim(x, 1); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"x", x}}, [&] { return reshape(x, {4, 6}); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"x", x}}, [&] { return permute(x, {2, 0, 1}); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"x", x}}, [&] { return transpose(x, 1, 2); }).max_rel_err < 1e-4);
    CHECK(grad_check({{"x", x}}, [&] { return narrow(x, 2, 1, 2); }).max_rel_err < 1e-4);
    auto logits = random_tensor({4, 3}, 20);
    const std::vector<int> labels{0, 2, 1, 2};
    CHECK(grad_check({{"l", logits}}, [&] { return cross_entropy(logits, labels); }).max_rel_err < 1e-4);
    CHECK_THROWS_AS((void)cross_entropy(logits, std::vector<int>{0, 3, 1, 2}), DimensionError);
}

TEST_CASE("backward: sum gives ones, fan-out accumulates, second call fails") {
    auto x = Tensor64::zeros({2, 2}, true);
    auto loss = sum(x);
    backward(loss);
    for (const double g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS_AS(backward(loss), StateError);

    auto y = Tensor64::from_data({2}, {1.5, -2.0}, true);
    backward(sum(add(mul(y, y), y)));  // d/dy (y^2 + y) = 2y + 1
    CHECK(y.grad()[0] == doctest::Approx(4.0));
    CHECK(y.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("linear layer mse gradient matches closed form") {
    const std::size_t n = 5, in = 3, out = 2;
    auto w = random_tensor({in, out}, 21, -1, 1, true);
    const auto x = random_tensor({n, in}, 22);
    const auto y = random_tensor({n, out}, 23);
    backward(mse(matmul(x, w), y));
    // dL/dW = 2 x^T (xW - y) / (n*out)
    const auto pred = matmul(x.detach(), w.detach());
    for (std::size_t i = 0; i < in; ++i)
        for (std::size_t j = 0; j < out; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r) acc += x.at({r, i}) * (pred.at({r, j}) - y.at({r, j}));
            CHECK(w.grad()[i * out + j] == doctest::Approx(2.0 * acc / static_cast<double>(n * out)).epsilon(1e-12));
        }
}

TEST_CASE("non-finite results raise NumericError") {
    const auto x = Tensor::from_data({2}, {0.0f, 1.0f});
    CHECK_THROWS_AS((void)power(x, -1.0f), NumericError);
    const auto huge = Tensor::from_data({1}, {3e38f});
    CHECK_THROWS_AS((void)scale(huge, 10.0f), NumericError);
}

TEST_CASE("no-grad mode records nothing") {
    auto w = Tensor64::from_data({2}, {1, 2}, true);
    Tensor64 out;
    {
        NoGradGuard guard;
        out = mul(w, w);
    }
    CHECK(out.is_leaf());
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("two-block transformer passes the finite-difference check") {
    ParameterStore<double> store;
    const TransformerBlock<double> b0(store, "b0", 8, 2, 31);
    const TransformerBlock<double> b1(store, "b1", 8, 2, 32);
    auto x = random_tensor({1, 2, 8}, 33);
    std::vector<std::pair<std::string, Tensor64>> leaves(store.entries().begin(), store.entries().end());
    // Non-trivial layernorm affines so their gradients are exercised.
    for (auto& [name, t] : leaves) {
        if (name.find("norm") != std::string::npos) {
            const auto r = random_tensor(t.shape(), rng::hash_string(name), 0.5, 1.5);
            std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
        }
    }
    leaves.emplace_back("x", x);
    const auto r = grad_check(leaves, [&] { return b1(b0(x)); });
    INFO("worst " << r.worst);
    CHECK(r.max_rel_err < 1e-3);
}
