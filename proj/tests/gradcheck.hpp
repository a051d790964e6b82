#pragma once

// Central finite-difference oracle for reverse-mode gradients, h = 1e-3,
// relative error on a denominator clamped at 1e-3.
//
// The objective is J = sum_i w_i * y_i with fixed random weights |w| in
// [0.5, 1.5]. The analytic side runs through the tape; the difference
// quotient accumulates J in double on the host so the float32 rounding of
// the unchanged terms cancels exactly between the two evaluations.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nodule/ops.hpp"
#include "nodule/rng.hpp"
#include "nodule/tensor.hpp"

namespace gradcheck {

inline double rel_err(double a, double b, double clamp = 1e-3) {
    const double denom = std::max({std::fabs(a), std::fabs(b), clamp});
    return std::fabs(a - b) / denom;
}

struct Result {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    int64_t failures = 0;
    std::string worst;
};

// build: reruns the op under test on the (possibly perturbed) leaves and
// returns its output tensor; a fresh graph every call.
inline Result check(const std::function<nodule::Tensor()>& build,
                    std::vector<nodule::Tensor> leaves, double tol = 1e-2,
                    float h = 1e-3f, int max_elems_per_leaf = 64, uint64_t seed = 7) {
    using nodule::Tensor;
    Result res;
    for (auto& leaf : leaves) leaf.zero_grad();

    Tensor y0 = build();
    nodule::Rng wrng(seed ^ 0x5eedULL);
    std::vector<float> w(static_cast<size_t>(y0.numel()));
    for (auto& v : w) {
        const float m = wrng.uniform(0.5f, 1.5f);
        v = (wrng.next_float() < 0.5f) ? -m : m;
    }
    nodule::backward(
        nodule::ops::sum(nodule::ops::mul(y0, Tensor::from_data(y0.shape(), w))));

    auto eval = [&]() {
        nodule::NoGradGuard ng;
        Tensor y = build();
        double acc = 0.0;
        const float* p = y.data();
        for (int64_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(w[i]) * p[i];
        return acc;
    };

    nodule::Rng rng(seed);
    for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        const int64_t n = leaf.numel();
        std::vector<int64_t> idx;
        if (n <= max_elems_per_leaf) {
            for (int64_t i = 0; i < n; ++i) idx.push_back(i);
        } else {
            for (int k = 0; k < max_elems_per_leaf; ++k)
                idx.push_back(static_cast<int64_t>(rng.next_u64() % n));
        }
        for (int64_t i : idx) {
            const float orig = leaf.data()[i];
            const float xp = orig + h;
            const float xm = orig - h;
            leaf.data()[i] = xp;
            const double lp = eval();
            leaf.data()[i] = xm;
            const double lm = eval();
            leaf.data()[i] = orig;
            const double fd = (lp - lm) / (static_cast<double>(xp) - xm);
            const double an = leaf.has_grad() ? leaf.grad_vec()[i] : 0.0;
            const double e = rel_err(an, fd);
            ++res.checked;
            if (e > res.max_rel_err) {
                res.max_rel_err = e;
                res.worst = "leaf " + std::to_string(li) + " elem " + std::to_string(i) +
                            " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
            }
            if (e > tol) ++res.failures;
        }
    }
    return res;
}

}  // namespace gradcheck
