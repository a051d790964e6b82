#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "nodule/errors.hpp"
#include "nodule/ops.hpp"
#include "nodule/rng.hpp"
#include "nodule/tensor.hpp"

using namespace nodule;

TEST_CASE("linear case: grad of sum(w*x) w.r.t. w equals x") {
    Tensor x = Tensor::from_data({4}, {1.0f, -2.0f, 3.0f, 0.5f});
    Tensor w = Tensor::from_data({4}, {0.1f, 0.2f, 0.3f, 0.4f}, true);
    backward(ops::sum(ops::mul(w, x)));
    for (int i = 0; i < 4; ++i) CHECK(w.grad_vec()[i] == x.data()[i]);
}

TEST_CASE("backward on non-scalar is an error") {
    Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tensor y = ops::mul_scalar(w, 2.0f);
    CHECK_THROWS_AS(backward(y), ValidationError);
}

TEST_CASE("backward without a recorded graph is an error") {
    Tensor leaf = Tensor::scalar(1.0f, true);
    CHECK_THROWS_AS(backward(leaf), ValidationError);
}

TEST_CASE("backward twice without re-forward is an error") {
    Tensor w = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f}, true);
    Tensor loss = ops::sum(ops::mul(w, w));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ValidationError);
}

TEST_CASE("gradients accumulate across separate graphs") {
    Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tensor x = Tensor::from_data({2}, {3.0f, 4.0f});
    backward(ops::sum(ops::mul(w, x)));
    backward(ops::sum(ops::mul(w, x)));
    CHECK(w.grad_vec()[0] == 6.0f);
    CHECK(w.grad_vec()[1] == 8.0f);
    w.zero_grad();
    backward(ops::sum(ops::mul(w, x)));
    CHECK(w.grad_vec()[0] == 3.0f);
}

TEST_CASE("shared subexpression receives both contributions") {
    Tensor w = Tensor::from_data({1}, {3.0f}, true);
    Tensor sq = ops::mul(w, w);
    Tensor loss = ops::sum(ops::add(sq, sq));  // 2*w^2, d/dw = 4w
    backward(loss);
    CHECK(w.grad_vec()[0] == 12.0f);
}

TEST_CASE("backward is deterministic on identical graphs") {
    auto run = [](std::vector<float>& out) {
        Rng rng(99);
        std::vector<float> xv(64), wv(64);
        for (auto& v : xv) v = rng.gaussian();
        for (auto& v : wv) v = rng.gaussian();
        Tensor x = Tensor::from_data({1, 4, 4, 4}, xv);
        Tensor w = Tensor::from_data({4, 4, 2, 2}, wv, true);
        Tensor y = ops::silu(ops::conv2d(x, w, nullptr, 1, 1));
        backward(ops::mean(ops::mul(y, y)));
        out = w.grad_vec();
    };
    std::vector<float> g1, g2;
    run(g1);
    run(g2);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * 4) == 0);
}

TEST_CASE("no-grad mode records no graph") {
    Tensor w = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    NoGradGuard ng;
    Tensor y = ops::sum(ops::mul(w, w));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.impl()->node == nullptr);
}

TEST_CASE("ops skip gradient for non-requires-grad inputs") {
    Tensor a = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tensor c = Tensor::from_data({2}, {5.0f, 6.0f});  // constant
    backward(ops::sum(ops::mul(a, c)));
    CHECK(a.has_grad());
    CHECK_FALSE(c.has_grad());
}
