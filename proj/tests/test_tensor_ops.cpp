#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "nodule/errors.hpp"
#include "nodule/kernels.hpp"
#include "nodule/ops.hpp"
#include "nodule/rng.hpp"
#include "nodule/tensor.hpp"

using namespace nodule;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f,
                     bool requires_grad = false) {
    std::vector<float> data(static_cast<size_t>(numel_of(shape)));
    for (auto& v : data) v = scale * rng.gaussian();
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// evenly spaced shuffled values: no two elements within 2h of each other,
// keeps argmax selections stable under finite-difference perturbation
Tensor distinct_tensor(std::vector<int> shape, Rng& rng, float step = 0.1f) {
    const int64_t n = numel_of(shape);
    std::vector<float> data(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) data[i] = step * static_cast<float>(i - n / 2);
    rng.shuffle(data);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel") {
    Rng rng(1);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f});
    Tensor y = ops::conv2d(x, w, nullptr, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d 3x3 ones with pad 1") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y = ops::conv2d(x, w, nullptr, 1, 1);
    const float* p = y.data();
    // corners 4, edge midpoints 6, center 9
    CHECK(p[0] == 4.0f);
    CHECK(p[1] == 6.0f);
    CHECK(p[2] == 4.0f);
    CHECK(p[3] == 6.0f);
    CHECK(p[4] == 9.0f);
    CHECK(p[5] == 6.0f);
    CHECK(p[6] == 4.0f);
    CHECK(p[7] == 6.0f);
    CHECK(p[8] == 4.0f);
}

TEST_CASE("conv2d output size at detector scale") {
    Rng rng(2);
    Tensor x = random_tensor({1, 3, 416, 416}, rng);
    Tensor w = random_tensor({16, 3, 3, 3}, rng, 0.1f);
    Tensor y = ops::conv2d(x, w, nullptr, 2, 1);
    CHECK(y.shape() == std::vector<int>{1, 16, 208, 208});
}

TEST_CASE("conv2d shape errors") {
    Rng rng(3);
    Tensor x = random_tensor({1, 3, 8, 8}, rng);
    Tensor w = random_tensor({4, 2, 3, 3}, rng);
    CHECK_THROWS_WITH_AS(ops::conv2d(x, w, nullptr, 1, 1),
                         doctest::Contains("(1,3,8,8)"), ValidationError);
    Tensor w2 = random_tensor({4, 3, 9, 9}, rng);
    CHECK_THROWS_AS(ops::conv2d(x, w2, nullptr, 1, 0), ValidationError);
}

TEST_CASE("conv2d forward is pure") {
    Rng rng(4);
    Tensor x = random_tensor({2, 4, 9, 7}, rng);
    Tensor w = random_tensor({6, 4, 3, 3}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor y1 = ops::conv2d(x, w, &b, 2, 1);
    Tensor y2 = ops::conv2d(x, w, &b, 2, 1);
    CHECK(std::memcmp(y1.data(), y2.data(), y1.numel() * 4) == 0);
}

TEST_CASE("conv2d optimized path matches naive reference within 1e-5") {
    Rng rng(5);
    struct Cfg {
        std::vector<int> xs, ws;
        int stride, pad;
    };
    for (const Cfg& c : {Cfg{{2, 3, 11, 13}, {5, 3, 3, 3}, 1, 1},
                         Cfg{{1, 4, 16, 16}, {8, 4, 3, 3}, 2, 1},
                         Cfg{{2, 6, 9, 9}, {4, 6, 1, 1}, 1, 0},
                         Cfg{{1, 2, 7, 7}, {3, 2, 5, 5}, 1, 2},
                         Cfg{{1, 3, 8, 8}, {2, 3, 2, 2}, 2, 0}}) {
        Tensor x = random_tensor(c.xs, rng);
        Tensor w = random_tensor(c.ws, rng);
        Tensor b = random_tensor({c.ws[0]}, rng);
        kern::ConvDims d = kern::conv_dims(c.xs, c.ws, c.stride, c.pad);
        std::vector<float> y_opt(static_cast<size_t>(d.n) * d.cout * d.oh * d.ow);
        std::vector<float> y_ref(y_opt.size());
        kern::conv2d_forward(x.data(), w.data(), b.data(), y_opt.data(), d);
        ref::conv2d_forward(x.data(), w.data(), b.data(), y_ref.data(), d);
        float max_diff = 0.0f;
        for (size_t i = 0; i < y_opt.size(); ++i)
            max_diff = std::max(max_diff, std::fabs(y_opt[i] - y_ref[i]));
        CHECK(max_diff <= 1e-5f);

        // backward comparison on random upstream gradient
        Rng rng2(17);
        std::vector<float> dy(y_opt.size());
        for (auto& v : dy) v = rng2.gaussian();
        std::vector<float> dx_o(x.numel(), 0.0f), dx_r(x.numel(), 0.0f);
        std::vector<float> dw_o(w.numel(), 0.0f), dw_r(w.numel(), 0.0f);
        std::vector<float> db_o(d.cout, 0.0f), db_r(d.cout, 0.0f);
        kern::conv2d_backward(x.data(), w.data(), dy.data(), dx_o.data(), dw_o.data(),
                              db_o.data(), d);
        ref::conv2d_backward(x.data(), w.data(), dy.data(), dx_r.data(), dw_r.data(),
                             db_r.data(), d);
        float bd = 0.0f;
        for (size_t i = 0; i < dx_o.size(); ++i)
            bd = std::max(bd, std::fabs(dx_o[i] - dx_r[i]));
        for (size_t i = 0; i < dw_o.size(); ++i)
            bd = std::max(bd, std::fabs(dw_o[i] - dw_r[i]));
        for (size_t i = 0; i < db_o.size(); ++i)
            bd = std::max(bd, std::fabs(db_o[i] - db_r[i]));
        CHECK(bd <= 2e-4f);  // gradients accumulate more terms than forward
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(13);
    Tensor x = random_tensor({2, 3, 6, 5}, rng, 0.5f, true);
    Tensor w = random_tensor({4, 3, 3, 3}, rng, 0.5f, true);
    Tensor b = random_tensor({4}, rng, 0.5f, true);
    auto res = gradcheck::check([&] { return ops::conv2d(x, w, &b, 2, 1); }, {x, w, b});
    CHECK(res.failures == 0);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-2);
}

TEST_CASE("batch_norm2d eval centered constant") {
    Tensor x = Tensor::full({2, 3, 4, 4}, 1.5f);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    Tensor rm = Tensor::full({3}, 1.5f);
    Tensor rv = Tensor::full({3}, 1.0f);
    Tensor y = ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, false);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.data()[i]) < 1e-4f);
}

TEST_CASE("batch_norm2d training normalizes batch statistics") {
    Rng rng(7);
    Tensor x = random_tensor({4, 3, 5, 5}, rng, 2.0f);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    Tensor y = ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, true);
    const int hw = 25, n = 4;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0, ss = 0.0;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < hw; ++i) {
                const float v = y.data()[(b * 3 + c) * hw + i];
                sum += v;
                ss += static_cast<double>(v) * v;
            }
        const double m = sum / (n * hw);
        const double var = ss / (n * hw) - m * m;
        CHECK(std::fabs(m) < 1e-4);
        CHECK(std::fabs(var - 1.0) < 1e-2);
    }
}

TEST_CASE("batch_norm2d running statistics update rule") {
    Rng rng(8);
    Tensor x = random_tensor({2, 2, 4, 4}, rng);
    Tensor gamma = Tensor::full({2}, 1.0f);
    Tensor beta = Tensor::zeros({2});
    Tensor rm = Tensor::full({2}, 0.5f);
    Tensor rv = Tensor::full({2}, 2.0f);
    // batch statistics computed independently
    double mean0 = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 16; ++i) mean0 += x.data()[b * 2 * 16 + i];
    mean0 /= 32.0;
    double var0 = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 16; ++i) {
            double d = x.data()[b * 2 * 16 + i] - mean0;
            var0 += d * d;
        }
    var0 /= 32.0;
    ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, true);
    CHECK(rm.data()[0] == doctest::Approx(0.97 * 0.5 + 0.03 * mean0).epsilon(1e-5));
    CHECK(rv.data()[0] == doctest::Approx(0.97 * 2.0 + 0.03 * var0).epsilon(1e-5));
}

TEST_CASE("batch_norm2d degenerate single-value channel is an error") {
    Tensor x = Tensor::full({1, 3, 1, 1}, 1.0f);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0f);
    CHECK_THROWS_AS(ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, true),
                    ValidationError);
}

TEST_CASE("batch_norm2d beta gradient equals element count") {
    Rng rng(9);
    const int n = 2, c = 3, h = 4, w = 4;
    Tensor x = random_tensor({n, c, h, w}, rng, 1.0f, false);
    Tensor gamma = Tensor::full({c}, 1.0f, true);
    Tensor beta = Tensor::zeros({c}, true);
    Tensor rm = Tensor::zeros({c});
    Tensor rv = Tensor::full({c}, 1.0f);
    Tensor y = ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, true);
    backward(ops::sum(y));
    for (int ch = 0; ch < c; ++ch)
        CHECK(beta.grad_vec()[ch] == doctest::Approx(n * h * w).epsilon(1e-5));
}

TEST_CASE("batch_norm2d gradients match finite differences") {
    Rng rng(10);
    Tensor x = random_tensor({3, 2, 4, 3}, rng, 1.0f, true);
    Tensor gamma = random_tensor({2}, rng, 0.3f, true);
    Tensor beta = random_tensor({2}, rng, 0.3f, true);
    for (int i = 0; i < 2; ++i) gamma.data()[i] += 1.0f;
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::full({2}, 1.0f);

    SUBCASE("training mode") {
        auto res = gradcheck::check(
            [&] {
                Tensor rmc = Tensor::from_data({2}, rm.vec());
                Tensor rvc = Tensor::from_data({2}, rv.vec());
                return ops::batch_norm2d(x, gamma, beta, rmc, rvc, 1e-5f, 0.03f, true);
            },
            {x, gamma, beta});
        CHECK(res.failures == 0);
    }
    SUBCASE("eval mode") {
        auto res = gradcheck::check(
            [&] {
                return ops::batch_norm2d(x, gamma, beta, rm, rv, 1e-5f, 0.03f, false);
            },
            {x, gamma, beta});
        CHECK(res.failures == 0);
    }
}

TEST_CASE("silu point values") {
    Tensor x = Tensor::from_data({3}, {0.0f, 1.0f, 20.0f});
    Tensor y = ops::silu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(std::fabs(y.data()[2] - 20.0f) < 1e-6f * 20.0f + 1e-6f);
}

TEST_CASE("silu gradient matches finite differences") {
    // stays clear of the flat spot near x = -1.28 where the derivative
    // vanishes below the float32 difference-quotient noise floor
    Rng rng(11);
    Tensor x = random_tensor({40}, rng, 1.0f, true);
    for (int64_t i = 0; i < x.numel(); ++i) {
        float v = rng.uniform(-4.0f, 3.0f);
        if (v > -2.0f && v < -0.8f) v += 2.5f;
        x.data()[i] = v;
    }
    auto res = gradcheck::check([&] { return ops::silu(x); }, {x});
    INFO(res.worst);
    CHECK(res.failures == 0);
}

TEST_CASE("maxpool2d identity and full-window") {
    Rng rng(12);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor y = ops::maxpool2d(x, 1, 1, 0);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor x2 = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y2 = ops::maxpool2d(x2, 2, 1, 0);
    REQUIRE(y2.numel() == 1);
    CHECK(y2.data()[0] == 4.0f);
}

TEST_CASE("maxpool2d spp configuration preserves shape") {
    Rng rng(13);
    Tensor x = random_tensor({1, 8, 13, 13}, rng);
    CHECK(ops::maxpool2d(x, 5, 1, 2).shape() == std::vector<int>{1, 8, 13, 13});
    CHECK(ops::maxpool2d(x, 9, 1, 4).shape() == std::vector<int>{1, 8, 13, 13});
    CHECK(ops::maxpool2d(x, 13, 1, 6).shape() == std::vector<int>{1, 8, 13, 13});
}

TEST_CASE("maxpool2d window larger than padded input is an error") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    CHECK_THROWS_AS(ops::maxpool2d(x, 6, 1, 1), ValidationError);
}

TEST_CASE("maxpool2d tie routes gradient to first occurrence") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 3.0f, true);
    Tensor y = ops::maxpool2d(x, 2, 1, 0);
    backward(ops::sum(y));
    CHECK(x.grad_vec()[0] == 1.0f);
    CHECK(x.grad_vec()[1] == 0.0f);
    CHECK(x.grad_vec()[2] == 0.0f);
    CHECK(x.grad_vec()[3] == 0.0f);
}

TEST_CASE("maxpool2d gradient matches finite differences") {
    Rng rng(14);
    Tensor x = distinct_tensor({2, 2, 6, 6}, rng);
    auto res = gradcheck::check([&] { return ops::maxpool2d(x, 3, 2, 1); }, {x});
    INFO(res.worst);
    CHECK(res.failures == 0);
}

TEST_CASE("maxpool2d matches serial reference") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 9, 9}, rng);
    kern::PoolDims d = kern::pool_dims(x.shape(), 3, 2, 1);
    std::vector<float> y_opt(static_cast<size_t>(d.n) * d.c * d.oh * d.ow);
    std::vector<float> y_ref(y_opt.size());
    std::vector<int> argmax(y_opt.size());
    kern::maxpool_forward(x.data(), y_opt.data(), argmax.data(), d);
    ref::maxpool_forward(x.data(), y_ref.data(), d);
    CHECK(std::memcmp(y_opt.data(), y_ref.data(), y_opt.size() * 4) == 0);
}

TEST_CASE("upsample_nearest2x replicates and sums gradients") {
    Tensor x = Tensor::from_data({1, 1, 1, 1}, {5.0f}, true);
    Tensor y = ops::upsample_nearest2x(x);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == 5.0f);
    backward(ops::sum(y));
    CHECK(x.grad_vec()[0] == 4.0f);

    Rng rng(16);
    Tensor x2 = random_tensor({1, 4, 13, 13}, rng);
    CHECK(ops::upsample_nearest2x(x2).shape() == std::vector<int>{1, 4, 26, 26});
}

TEST_CASE("upsample_nearest2x gradient matches finite differences") {
    Rng rng(17);
    Tensor x = random_tensor({1, 2, 3, 4}, rng, 1.0f, true);
    auto res = gradcheck::check([&] { return ops::upsample_nearest2x(x); }, {x});
    CHECK(res.failures == 0);
}

TEST_CASE("concat_channels forward and backward slicing") {
    Rng rng(18);
    Tensor a = random_tensor({1, 3, 4, 4}, rng, 1.0f, true);
    Tensor b = random_tensor({1, 5, 4, 4}, rng, 1.0f, true);
    Tensor y = ops::concat_channels({a, b});
    REQUIRE(y.shape() == std::vector<int>{1, 8, 4, 4});
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(y.data()[i] == a.data()[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(y.data()[a.numel() + i] == b.data()[i]);

    // single input is the identity
    Tensor y1 = ops::concat_channels({a});
    CHECK(std::memcmp(y1.data(), a.data(), a.numel() * 4) == 0);

    // backward slices the upstream gradient back by channel offsets
    Tensor g = random_tensor({1, 8, 4, 4}, rng);
    backward(ops::sum(ops::mul(y, g)));
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.grad_vec()[i] == g.data()[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(b.grad_vec()[i] == g.data()[a.numel() + i]);
}

TEST_CASE("concat_channels mismatch names offending index") {
    Rng rng(19);
    Tensor a = random_tensor({1, 3, 4, 4}, rng);
    Tensor b = random_tensor({1, 3, 5, 4}, rng);
    CHECK_THROWS_WITH_AS(ops::concat_channels({a, b}), doctest::Contains("input 1"),
                         ValidationError);
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    Rng rng(20);
    Tensor a = random_tensor({30}, rng, 1.0f, true);
    Tensor b = random_tensor({30}, rng, 1.0f, true);
    for (int i = 0; i < 30; ++i) {
        // keep b away from zero for div, and a/b separated for min/max
        b.data()[i] += (b.data()[i] >= 0 ? 2.0f : -2.0f);
        if (std::fabs(a.data()[i] - b.data()[i]) < 0.05f) a.data()[i] -= 0.3f;
    }

    auto check_ok = [&](const std::function<Tensor()>& f) {
        auto res = gradcheck::check(f, {a, b});
        INFO(res.worst);
        CHECK(res.failures == 0);
    };
    check_ok([&] { return ops::add(a, b); });
    check_ok([&] { return ops::sub(a, b); });
    check_ok([&] { return ops::mul(a, b); });
    check_ok([&] { return ops::div(a, b); });
    check_ok([&] { return ops::minimum(a, b); });
    check_ok([&] { return ops::maximum(a, b); });
    check_ok([&] { return ops::sigmoid(a); });
    check_ok([&] { return ops::arctan(a); });
    check_ok([&] { return ops::add_scalar(a, 1.7f); });
    check_ok([&] { return ops::mul_scalar(a, -0.6f); });
}

TEST_CASE("sum and mean gradients match finite differences") {
    // element magnitudes bounded away from zero: the reductions cast their
    // double accumulator to float32, which caps difference-quotient
    // resolution relative to tiny per-element gradients
    Rng rng(23);
    auto bounded = [&](int n) {
        std::vector<float> d(n);
        for (auto& v : d) {
            const float m = rng.uniform(0.5f, 1.5f);
            v = (rng.next_float() < 0.5f) ? -m : m;
        }
        return Tensor::from_data({n}, std::move(d), true);
    };
    Tensor u = bounded(12);
    Tensor v = bounded(12);
    auto r1 = gradcheck::check([&] { return ops::sum(ops::mul(u, v)); }, {u, v});
    INFO(r1.worst);
    CHECK(r1.failures == 0);
    auto r2 = gradcheck::check([&] { return ops::mean(ops::mul(u, u)); }, {u});
    INFO(r2.worst);
    CHECK(r2.failures == 0);
}

TEST_CASE("relu gradient away from the kink") {
    Rng rng(21);
    Tensor a = random_tensor({30}, rng, 1.0f, true);
    for (int i = 0; i < 30; ++i)
        if (std::fabs(a.data()[i]) < 0.1f) a.data()[i] = 0.5f;
    auto res = gradcheck::check([&] { return ops::relu(a); }, {a});
    CHECK(res.failures == 0);
}

TEST_CASE("bce_with_logits_mean value and gradient") {
    Tensor z = Tensor::from_data({2}, {0.0f, 0.0f}, true);
    Tensor l = ops::bce_with_logits_mean(z, {1.0f, 0.0f});
    CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Rng rng(22);
    Tensor z2 = random_tensor({16}, rng, 1.0f, true);
    for (int64_t i = 0; i < z2.numel(); ++i) z2.data()[i] = rng.uniform(-2.0f, 2.0f);
    std::vector<float> t(16);
    for (auto& v : t) v = (rng.next_float() < 0.5f) ? 0.0f : 1.0f;
    auto res = gradcheck::check([&] { return ops::bce_with_logits_mean(z2, t); }, {z2});
    INFO(res.worst);
    CHECK(res.failures == 0);
}

TEST_CASE("gather forward and scatter backward") {
    Tensor x = Tensor::from_data({5}, {10, 20, 30, 40, 50}, true);
    Tensor y = ops::gather(x, {4, 0, 0, 2});
    CHECK(y.data()[0] == 50.0f);
    CHECK(y.data()[1] == 10.0f);
    CHECK(y.data()[3] == 30.0f);
    backward(ops::sum(y));
    CHECK(x.grad_vec()[0] == 2.0f);  // duplicated index accumulates
    CHECK(x.grad_vec()[1] == 0.0f);
    CHECK(x.grad_vec()[2] == 1.0f);
    CHECK(x.grad_vec()[4] == 1.0f);
    CHECK_THROWS_AS(ops::gather(x, {5}), ValidationError);
}

TEST_CASE("all_finite flags NaN and Inf") {
    Tensor x = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f});
    CHECK(ops::all_finite(x));
    x.data()[1] = std::nanf("");
    CHECK_FALSE(ops::all_finite(x));
}
