// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "neurogen/gradcheck.hpp"
#include "neurogen/kernels.hpp"
#include "neurogen/rng.hpp"
#include "neurogen/tape.hpp"

using namespace ng;

namespace {

TensorD randn(Rng& rng, Shape shape, double stddev = 1.0) {
    auto t = TensorD::zeros(std::move(shape));
    rng.fill_normal<double>(t.mutable_data(), 0.0, stddev);
    return t;
}

// Resamples until every coordinate sits away from the kink of relu / the tie
// region of maxpool, so central differences stay valid.
TensorD randn_margin(Rng& rng, Shape shape, double margin = 1e-2) {
    for (;;) {
        auto t = randn(rng, shape);
        bool ok = true;
        for (double v : t.data()) ok = ok && std::abs(v) > margin;
        if (ok) return t;
    }
}

}  // namespace

TEST_CASE("relu forward matches definition") {
    auto x = TensorF::from_data({3}, {-1.0f, 0.0f, 2.0f});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 0.0f);
    CHECK(y.data()[2] == 2.0f);
}

TEST_CASE("mse of a tensor with itself is zero") {
    Rng rng(7);
    auto w = randn(rng, {17});
    CHECK(mse(w, w).item() == 0.0);
}

TEST_CASE("conv2d sliding window sum, hand computed") {
    // 3x3 ones against 2x2 ones, stride 1, no pad: every window sums to 4.
    auto x = TensorF::full({1, 1, 3, 3}, 1.0f);
    auto w = TensorF::full({1, 1, 2, 2}, 1.0f);
    auto b = TensorF::zeros({1});
    auto y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (float v : y.data()) CHECK(v == 4.0f);
}

TEST_CASE("backward of mse against zero") {
    auto x = TensorF::from_data({1}, {3.0f});
    x.set_requires_grad(true);
    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto loss = mse(x, TensorF::zeros({1}));
        tape.backward(loss);
    }
    CHECK(tape.grad(x)[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward of sum(relu(x)) uses the 0 subgradient") {
    auto x = TensorF::from_data({2}, {-1.0f, 2.0f});
    x.set_requires_grad(true);
    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto loss = sum_reduce(relu(x));
        tape.backward(loss);
    }
    auto g = tape.grad(x);
    CHECK(g[0] == 0.0f);
    CHECK(g[1] == 1.0f);
}

TEST_CASE("unreachable leaf gets an exact zero gradient") {
    auto x = TensorF::from_data({2}, {1.0f, 2.0f});
    auto y = TensorF::from_data({2}, {5.0f, 5.0f});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto loss = sum_reduce(mul(x, x));
        tape.backward(loss);
    }
    auto gy = tape.grad(y);
    REQUIRE(gy.size() == 2);
    CHECK(gy[0] == 0.0f);
    CHECK(gy[1] == 0.0f);
    auto gx = tape.grad(x);
    CHECK(gx[0] == 2.0f);
    CHECK(gx[1] == 4.0f);
}

TEST_CASE("backward rejects non-scalar loss and consumed tapes") {
    auto x = TensorF::from_data({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    GradTape<float> tape;
    TapeScope<float> scope(tape);
    auto y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    auto loss = sum_reduce(y);
    GradTape<float> tape2;
    {
        TapeScope<float> scope2(tape2);
        auto loss2 = sum_reduce(mul(x, x));
        tape2.backward(loss2);
        CHECK_THROWS_AS(tape2.backward(loss2), ShapeError);
    }
}

TEST_CASE("shape errors name the kernel and the offending shapes") {
    auto a = TensorF::zeros({2, 3});
    auto b = TensorF::zeros({4, 5});
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
    CHECK_THROWS_AS(kernel_from_name("not_a_kernel"), ShapeError);
    CHECK(kernel_from_name("conv2d") == Kernel::conv2d);
}

TEST_CASE("forward results are bit-identical across runs") {
    Rng rng(42);
    auto x = cast<double, float>(randn(rng, {4, 6}));
    auto w = cast<double, float>(randn(rng, {5, 6}));
    auto y1 = matmul(x, w, false, true);
    auto y2 = matmul(x, w, false, true);
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("softmax rows sum to one and log_softmax matches log of softmax") {
    Rng rng(3);
    auto x = randn(rng, {5, 7}, 3.0);
    auto p = softmax(x);
    auto lp = log_softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 7; ++c) sum += p.data()[r * 7 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < p.numel(); ++i)
        CHECK(lp.data()[i] == doctest::Approx(std::log(p.data()[i])).epsilon(1e-6));
}

TEST_CASE("grad_check basics") {
    auto sum_sq = [](const TensorD& x) { return sum_reduce(mul(x, x)); };
    auto point = TensorD::from_data({2}, {1.0, 2.0});
    CHECK(grad_check(sum_sq, point, 1e-5) < 1e-7);

    auto constant = [](const TensorD& x) {
        return mul(sum_reduce(x), TensorD::scalar(0.0));
    };
    CHECK(grad_check(constant, point, 1e-5) == 0.0);
}

TEST_CASE("grad_check: smooth kernels stay under 1e-6") {
    Rng rng(11);

    SUBCASE("matmul chain") {
        auto b = randn(rng, {3, 4});
        auto fn = [&](const TensorD& x) { return mse(matmul(x, b), TensorD::zeros({2, 4})); };
        CHECK(grad_check(fn, randn(rng, {2, 3}), 1e-6) < 1e-6);
    }
    SUBCASE("matmul transposed operands") {
        auto b = randn(rng, {4, 3});
        auto fn = [&](const TensorD& x) { return mse(matmul(x, b, false, true), TensorD::zeros({2, 4})); };
        CHECK(grad_check(fn, randn(rng, {2, 3}), 1e-6) < 1e-6);
        auto c = randn(rng, {2, 4});
        auto fn2 = [&](const TensorD& x) { return mse(matmul(x, c, true, false), TensorD::zeros({3, 4})); };
        CHECK(grad_check(fn2, randn(rng, {2, 3}), 1e-6) < 1e-6);
    }
    SUBCASE("add with bias broadcast") {
        auto bias = randn(rng, {5});
        auto fn = [&](const TensorD& x) { return mse(add(x, bias), TensorD::zeros({3, 5})); };
        CHECK(grad_check(fn, randn(rng, {3, 5}), 1e-6) < 1e-6);
        auto a = randn(rng, {3, 5});
        auto fn_bias = [&](const TensorD& b2) { return mse(add(a, b2), TensorD::zeros({3, 5})); };
        CHECK(grad_check(fn_bias, randn(rng, {5}), 1e-6) < 1e-6);
    }
    SUBCASE("mul elementwise") {
        auto b = randn(rng, {4, 4});
        auto fn = [&](const TensorD& x) { return sum_reduce(mul(x, b)); };
        CHECK(grad_check(fn, randn(rng, {4, 4}), 1e-6) < 1e-6);
    }
    SUBCASE("tanh") {
        auto fn = [&](const TensorD& x) { return mse(tanh(x), TensorD::zeros({6})); };
        CHECK(grad_check(fn, randn(rng, {6}), 1e-6) < 1e-6);
    }
    SUBCASE("softmax and log_softmax") {
        std::vector<std::int64_t> labels{1, 0};
        auto fn = [&](const TensorD& x) { return mse(softmax(x), TensorD::zeros({2, 5})); };
        CHECK(grad_check(fn, randn(rng, {2, 5}), 1e-6) < 1e-6);
        auto fn2 = [&](const TensorD& x) { return mse(log_softmax(x), TensorD::zeros({2, 5})); };
        CHECK(grad_check(fn2, randn(rng, {2, 5}), 1e-6) < 1e-6);
    }
    SUBCASE("layernorm, all three operands") {
        auto gamma = randn(rng, {6});
        auto beta = randn(rng, {6});
        auto x0 = randn(rng, {3, 6});
        auto fn_x = [&](const TensorD& x) { return mse(layernorm(x, gamma, beta), TensorD::zeros({3, 6})); };
        CHECK(grad_check(fn_x, x0, 1e-6) < 1e-6);
        auto fn_g = [&](const TensorD& g) { return mse(layernorm(x0, g, beta), TensorD::zeros({3, 6})); };
        CHECK(grad_check(fn_g, gamma, 1e-6) < 1e-6);
        auto fn_b = [&](const TensorD& b) { return mse(layernorm(x0, gamma, b), TensorD::zeros({3, 6})); };
        CHECK(grad_check(fn_b, beta, 1e-6) < 1e-6);
    }
    SUBCASE("embedding_lookup scatters into the table") {
        std::vector<std::int64_t> ids{2, 0, 2, 1};
        auto fn = [&](const TensorD& table) {
            return mse(embedding_lookup(table, ids), TensorD::zeros({4, 3}));
        };
        CHECK(grad_check(fn, randn(rng, {4, 3}), 1e-6) < 1e-6);
    }
    SUBCASE("conv2d for input, weight and bias") {
        auto w = randn(rng, {2, 1, 3, 3});
        auto b = randn(rng, {2});
        auto x0 = randn(rng, {2, 1, 5, 5});
        auto fn_x = [&](const TensorD& x) { return mse(conv2d(x, w, b, 1, 1), TensorD::zeros({2, 2, 5, 5})); };
        CHECK(grad_check(fn_x, x0, 1e-6) < 1e-6);
        auto fn_w = [&](const TensorD& ww) { return mse(conv2d(x0, ww, b, 2, 0), TensorD::zeros({2, 2, 2, 2})); };
        CHECK(grad_check(fn_w, w, 1e-6) < 1e-6);
        auto fn_b = [&](const TensorD& bb) { return mse(conv2d(x0, w, bb, 1, 0), TensorD::zeros({2, 2, 3, 3})); };
        CHECK(grad_check(fn_b, b, 1e-6) < 1e-6);
    }
    SUBCASE("global_avg_pool, reductions, reshape, slice, concat") {
        auto fn = [&](const TensorD& x) { return mse(global_avg_pool(x), TensorD::zeros({2, 3})); };
        CHECK(grad_check(fn, randn(rng, {2, 3, 4, 4}), 1e-6) < 1e-6);
        auto fn_mean = [&](const TensorD& x) { return mse(mean_reduce(x, 1), TensorD::zeros({2, 4})); };
        CHECK(grad_check(fn_mean, randn(rng, {2, 3, 4}), 1e-6) < 1e-6);
        auto fn_slice = [&](const TensorD& x) {
            return sum_reduce(mul(slice_view(x, {1, 0}, {2, 3}), slice_view(x, {0, 1}, {2, 3})));
        };
        CHECK(grad_check(fn_slice, randn(rng, {3, 4}), 1e-6) < 1e-6);
        auto other = randn(rng, {2, 3});
        auto fn_cat = [&](const TensorD& x) {
            return mse(concat<double>({x, other, x}, 1), TensorD::zeros({2, 9}));
        };
        CHECK(grad_check(fn_cat, randn(rng, {2, 3}), 1e-6) < 1e-6);
        auto fn_reshape = [&](const TensorD& x) { return mse(reshape(x, {6}), TensorD::zeros({6})); };
        CHECK(grad_check(fn_reshape, randn(rng, {2, 3}), 1e-6) < 1e-6);
    }
    SUBCASE("scaled_dot_attention, causal and full") {
        auto k = randn(rng, {4, 3});
        auto v = randn(rng, {4, 3});
        auto q0 = randn(rng, {4, 3});
        for (bool causal : {false, true}) {
            auto fn_q = [&](const TensorD& q) {
                return mse(scaled_dot_attention(q, k, v, causal), TensorD::zeros({4, 3}));
            };
            CHECK(grad_check(fn_q, q0, 1e-6) < 1e-6);
            auto fn_k = [&](const TensorD& kk) {
                return mse(scaled_dot_attention(q0, kk, v, causal), TensorD::zeros({4, 3}));
            };
            CHECK(grad_check(fn_k, k, 1e-6) < 1e-6);
            auto fn_v = [&](const TensorD& vv) {
                return mse(scaled_dot_attention(q0, k, vv, causal), TensorD::zeros({4, 3}));
            };
            CHECK(grad_check(fn_v, v, 1e-6) < 1e-6);
        }
    }
    SUBCASE("cross_entropy and mse") {
        std::vector<std::int64_t> labels{2, 0, 1};
        auto fn = [&](const TensorD& x) { return cross_entropy(x, labels); };
        CHECK(grad_check(fn, randn(rng, {3, 4}), 1e-6) < 1e-6);
        auto b = randn(rng, {7});
        auto fn_mse = [&](const TensorD& x) { return mse(x, b); };
        CHECK(grad_check(fn_mse, randn(rng, {7}), 1e-6) < 1e-6);
        auto fn_mse_b = [&](const TensorD& x) { return mse(b, x); };
        CHECK(grad_check(fn_mse_b, randn(rng, {7}), 1e-6) < 1e-6);
    }
}

TEST_CASE("grad_check: kinked kernels pass away from the kink") {
    Rng rng(13);
    SUBCASE("relu") {
        auto fn = [&](const TensorD& x) { return mse(relu(x), TensorD::zeros({8})); };
        CHECK(grad_check(fn, randn_margin(rng, {8}), 1e-5) < 1e-4);
    }
    SUBCASE("maxpool2d") {
        // Margin resampling makes pooling ties vanishingly unlikely.
        auto fn = [&](const TensorD& x) { return mse(maxpool2d(x, 2), TensorD::zeros({1, 2, 2, 2})); };
        CHECK(grad_check(fn, randn_margin(rng, {1, 2, 4, 4}), 1e-5) < 1e-4);
    }
}

TEST_CASE("maxpool2d breaks ties at the first index in row-major order") {
    auto x = TensorF::from_data({1, 1, 2, 2}, {5.0f, 5.0f, 5.0f, 5.0f});
    x.set_requires_grad(true);
    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto loss = sum_reduce(maxpool2d(x, 2));
        tape.backward(loss);
    }
    auto g = tape.grad(x);
    CHECK(g[0] == 1.0f);
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == 0.0f);
    CHECK(g[3] == 0.0f);
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
    auto x = TensorD::from_data({2}, {3.0, -1.0});
    x.set_requires_grad(true);
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = sum_reduce(add(mul(x, x), x));  // x^2 + x, grad 2x + 1
        tape.backward(loss);
    }
    auto g = tape.grad(x);
    CHECK(g[0] == doctest::Approx(7.0));
    CHECK(g[1] == doctest::Approx(-1.0));
}

TEST_CASE("ops on frozen tensors are not recorded") {
    auto x = TensorF::from_data({2}, {1.0f, 2.0f});
    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(tape.num_ops() == 0);
}
