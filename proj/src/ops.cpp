#include "nodule/ops.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "nodule/errors.hpp"
#include "nodule/kernels.hpp"

namespace nodule::ops {

namespace {

Tensor make_result(std::vector<int> shape, std::vector<float> data, const char* name,
                   const std::vector<Tensor>& inputs,
                   std::function<void(TensorImpl&)> backward_fn) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(data));
    bool rg = false;
    for (const auto& t : inputs) rg = rg || t.requires_grad();
    if (rg && grad_enabled()) {
        out.set_requires_grad(true);
        auto node = std::make_shared<Node>();
        node->op_name = name;
        node->inputs.reserve(inputs.size());
        for (const auto& t : inputs) node->inputs.push_back(t.impl());
        node->backward_fn = std::move(backward_fn);
        out.impl()->node = std::move(node);
    }
    return out;
}

float* acc_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
    return t.grad.data();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ValidationError(cat(op, " shape mismatch: ", shape_str(a.shape()), " vs ",
                                  shape_str(b.shape())));
}

}  // namespace

float sigmoid_scalar(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    kern::ConvDims d = kern::conv_dims(x.shape(), w.shape(), stride, pad);
    if (bias && bias->shape() != std::vector<int>{d.cout})
        throw ValidationError(cat("conv2d bias shape ", shape_str(bias->shape()),
                                  " does not match output channels ", d.cout));
    std::vector<float> y(static_cast<size_t>(d.n) * d.cout * d.oh * d.ow);
    kern::conv2d_forward(x.data(), w.data(), bias ? bias->data() : nullptr, y.data(), d);

    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = bias ? bias->impl() : nullptr;
    return make_result({d.n, d.cout, d.oh, d.ow}, std::move(y), "conv2d", inputs,
                       [xi, wi, bi, d](TensorImpl& out) {
                           float* dx = xi->requires_grad ? acc_grad(*xi) : nullptr;
                           float* dw = wi->requires_grad ? acc_grad(*wi) : nullptr;
                           float* db =
                               (bi && bi->requires_grad) ? acc_grad(*bi) : nullptr;
                           if (dx || dw || db)
                               kern::conv2d_backward(xi->data.data(), wi->data.data(),
                                                     out.grad.data(), dx, dw, db, d);
                       });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float eps, float momentum,
                    bool training) {
    if (x.rank() != 4)
        throw ValidationError(cat("batch_norm2d expects rank-4 input, got ",
                                  shape_str(x.shape())));
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::vector<int> cshape{c};
    const Tensor* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
    for (const Tensor* t : per_channel)
        if (t->shape() != cshape)
            throw ValidationError(cat("batch_norm2d per-channel tensor has shape ",
                                      shape_str(t->shape()), ", expected ",
                                      shape_str(cshape)));
    if (eps <= 0.0f) throw ValidationError("batch_norm2d eps must be positive");
    if (training && static_cast<int64_t>(n) * hw < 2)
        throw ValidationError(
            "batch_norm2d training mode needs at least 2 values per channel");

    std::vector<float> y(x.numel());
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    if (training) {
        auto saved_mean = std::make_shared<std::vector<float>>(c);
        auto saved_invstd = std::make_shared<std::vector<float>>(c);
        kern::bn_forward_train(x.data(), gamma.data(), beta.data(), y.data(),
                               running_mean.data(), running_var.data(), n, c, hw, eps,
                               momentum, saved_mean->data(), saved_invstd->data());
        return make_result(
            x.shape(), std::move(y), "batch_norm2d", {x, gamma, beta},
            [xi, gi, bi, saved_mean, saved_invstd, n, c, hw](TensorImpl& out) {
                kern::bn_backward_train(
                    xi->data.data(), gi->data.data(), out.grad.data(), saved_mean->data(),
                    saved_invstd->data(), xi->requires_grad ? acc_grad(*xi) : nullptr,
                    gi->requires_grad ? acc_grad(*gi) : nullptr,
                    bi->requires_grad ? acc_grad(*bi) : nullptr, n, c, hw);
            });
    }
    kern::bn_forward_eval(x.data(), gamma.data(), beta.data(), running_mean.data(),
                          running_var.data(), y.data(), n, c, hw, eps);
    auto rmi = running_mean.impl();
    auto rvi = running_var.impl();
    return make_result(x.shape(), std::move(y), "batch_norm2d", {x, gamma, beta},
                       [xi, gi, bi, rmi, rvi, n, c, hw, eps](TensorImpl& out) {
                           kern::bn_backward_eval(
                               xi->data.data(), gi->data.data(), out.grad.data(),
                               rmi->data.data(), rvi->data.data(),
                               xi->requires_grad ? acc_grad(*xi) : nullptr,
                               gi->requires_grad ? acc_grad(*gi) : nullptr,
                               bi->requires_grad ? acc_grad(*bi) : nullptr, n, c, hw, eps);
                       });
}

Tensor silu(const Tensor& x) {
    std::vector<float> y(x.numel());
    const float* xp = x.data();
#pragma omp parallel for
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = xp[i] * sigmoid_scalar(xp[i]);
    auto xi = x.impl();
    return make_result(x.shape(), std::move(y), "silu", {x}, [xi](TensorImpl& out) {
        if (!xi->requires_grad) return;
        float* dx = acc_grad(*xi);
        const float* g = out.grad.data();
        const float* xp = xi->data.data();
        const int64_t n = static_cast<int64_t>(xi->data.size());
#pragma omp parallel for
        for (int64_t i = 0; i < n; ++i) {
            const float s = sigmoid_scalar(xp[i]);
            dx[i] += g[i] * s * (1.0f + xp[i] * (1.0f - s));
        }
    });
}

Tensor maxpool2d(const Tensor& x, int k, int stride, int pad) {
    kern::PoolDims d = kern::pool_dims(x.shape(), k, stride, pad);
    std::vector<float> y(static_cast<size_t>(d.n) * d.c * d.oh * d.ow);
    auto argmax = std::make_shared<std::vector<int>>(y.size());
    kern::maxpool_forward(x.data(), y.data(), argmax->data(), d);
    auto xi = x.impl();
    return make_result({d.n, d.c, d.oh, d.ow}, std::move(y), "maxpool2d", {x},
                       [xi, argmax, d](TensorImpl& out) {
                           if (!xi->requires_grad) return;
                           kern::maxpool_backward(out.grad.data(), argmax->data(),
                                                  acc_grad(*xi), d);
                       });
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 4)
        throw ValidationError(cat("upsample_nearest2x expects rank-4 input, got ",
                                  shape_str(x.shape())));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<float> y(static_cast<size_t>(n) * c * 4 * h * w);
    const float* xp = x.data();
    const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for
    for (int64_t pc = 0; pc < planes; ++pc) {
        const float* src = xp + pc * h * w;
        float* dst = y.data() + pc * 4 * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const float v = src[i * w + j];
                float* d0 = dst + (2 * i) * (2 * w) + 2 * j;
                d0[0] = v;
                d0[1] = v;
                d0[2 * w] = v;
                d0[2 * w + 1] = v;
            }
    }
    auto xi = x.impl();
    return make_result({n, c, 2 * h, 2 * w}, std::move(y), "upsample_nearest2x", {x},
                       [xi, n, c, h, w](TensorImpl& out) {
                           if (!xi->requires_grad) return;
                           float* dx = acc_grad(*xi);
                           const float* g = out.grad.data();
                           const int64_t planes = static_cast<int64_t>(n) * c;
#pragma omp parallel for
                           for (int64_t pc = 0; pc < planes; ++pc) {
                               const float* gsrc = g + pc * 4 * h * w;
                               float* d = dx + pc * h * w;
                               for (int i = 0; i < h; ++i)
                                   for (int j = 0; j < w; ++j) {
                                       const float* g0 = gsrc + (2 * i) * (2 * w) + 2 * j;
                                       d[i * w + j] +=
                                           g0[0] + g0[1] + g0[2 * w] + g0[2 * w + 1];
                                   }
                           }
                       });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ValidationError("concat_channels needs at least one input");
    const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
    int ctotal = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].rank() != 4)
            throw ValidationError(cat("concat_channels input ", i, " has rank ",
                                      xs[i].rank(), ", expected 4"));
        if (xs[i].dim(0) != n || xs[i].dim(2) != h || xs[i].dim(3) != w)
            throw ValidationError(cat("concat_channels input ", i, " shape ",
                                      shape_str(xs[i].shape()),
                                      " does not match leading input ",
                                      shape_str(xs[0].shape())));
        ctotal += xs[i].dim(1);
    }
    std::vector<float> y(static_cast<size_t>(n) * ctotal * h * w);
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        int64_t coff = 0;
        for (const auto& t : xs) {
            const int ci = t.dim(1);
            std::copy_n(t.data() + static_cast<int64_t>(b) * ci * hw, ci * hw,
                        y.data() + (static_cast<int64_t>(b) * ctotal + coff) * hw);
            coff += ci;
        }
    }
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& t : xs) impls.push_back(t.impl());
    return make_result({n, ctotal, h, w}, std::move(y), "concat_channels", xs,
                       [impls, n, ctotal, hw](TensorImpl& out) {
                           const float* g = out.grad.data();
                           for (int b = 0; b < n; ++b) {
                               int64_t coff = 0;
                               for (const auto& t : impls) {
                                   const int ci = t->shape[1];
                                   if (t->requires_grad) {
                                       float* dst =
                                           acc_grad(*t) + static_cast<int64_t>(b) * ci * hw;
                                       const float* src =
                                           g + (static_cast<int64_t>(b) * ctotal + coff) * hw;
                                       for (int64_t i = 0; i < ci * hw; ++i) dst[i] += src[i];
                                   }
                                   coff += ci;
                               }
                           }
                       });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    std::vector<float> y(a.numel());
    const float* ap = a.data();
    const float* bp = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) y[i] = fwd(ap[i], bp[i]);
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(a.shape(), std::move(y), name, {a, b},
                       [ai, bi, bwd](TensorImpl& out) {
                           const float* g = out.grad.data();
                           const float* ap = ai->data.data();
                           const float* bp = bi->data.data();
                           float* da = ai->requires_grad ? acc_grad(*ai) : nullptr;
                           float* db = bi->requires_grad ? acc_grad(*bi) : nullptr;
                           const int64_t n = static_cast<int64_t>(ai->data.size());
                           for (int64_t i = 0; i < n; ++i) bwd(ap[i], bp[i], g[i], da ? da + i : nullptr, db ? db + i : nullptr);
                       });
}

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
    std::vector<float> y(x.numel());
    const float* xp = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = fwd(xp[i]);
    auto xi = x.impl();
    return make_result(x.shape(), std::move(y), name, {x}, [xi, bwd](TensorImpl& out) {
        if (!xi->requires_grad) return;
        float* dx = acc_grad(*xi);
        const float* g = out.grad.data();
        const float* xp = xi->data.data();
        const int64_t n = static_cast<int64_t>(xi->data.size());
        for (int64_t i = 0; i < n; ++i) dx[i] += bwd(xp[i]) * g[i];
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](float x, float y) { return x + y; },
        [](float, float, float g, float* da, float* db) {
            if (da) *da += g;
            if (db) *db += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](float x, float y) { return x - y; },
        [](float, float, float g, float* da, float* db) {
            if (da) *da += g;
            if (db) *db -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](float x, float y) { return x * y; },
        [](float x, float y, float g, float* da, float* db) {
            if (da) *da += g * y;
            if (db) *db += g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](float x, float y) { return x / y; },
        [](float x, float y, float g, float* da, float* db) {
            if (da) *da += g / y;
            if (db) *db -= g * x / (y * y);
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "minimum", [](float x, float y) { return x <= y ? x : y; },
        [](float x, float y, float g, float* da, float* db) {
            if (x <= y) {
                if (da) *da += g;
            } else if (db) {
                *db += g;
            }
        });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "maximum", [](float x, float y) { return x >= y ? x : y; },
        [](float x, float y, float g, float* da, float* db) {
            if (x >= y) {
                if (da) *da += g;
            } else if (db) {
                *db += g;
            }
        });
}

Tensor add_scalar(const Tensor& x, float c) {
    return unary_op(
        x, "add_scalar", [c](float v) { return v + c; }, [](float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& x, float c) {
    return unary_op(
        x, "mul_scalar", [c](float v) { return v * c; }, [c](float) { return c; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, "sigmoid", [](float v) { return sigmoid_scalar(v); },
        [](float v) {
            const float s = sigmoid_scalar(v);
            return s * (1.0f - s);
        });
}

Tensor arctan(const Tensor& x) {
    return unary_op(
        x, "arctan", [](float v) { return std::atan(v); },
        [](float v) { return 1.0f / (1.0f + v * v); });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const float* xp = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) acc += xp[i];
    auto xi = x.impl();
    return make_result({1}, {static_cast<float>(acc)}, "sum", {x}, [xi](TensorImpl& out) {
        if (!xi->requires_grad) return;
        float* dx = acc_grad(*xi);
        const float g = out.grad[0];
        const int64_t n = static_cast<int64_t>(xi->data.size());
        for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    const float* xp = x.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    auto xi = x.impl();
    return make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, "mean",
                       {x}, [xi, n](TensorImpl& out) {
                           if (!xi->requires_grad) return;
                           float* dx = acc_grad(*xi);
                           const float g = out.grad[0] / static_cast<float>(n);
                           for (int64_t i = 0; i < n; ++i) dx[i] += g;
                       });
}

Tensor bce_with_logits_mean(const Tensor& logits, std::vector<float> targets) {
    if (static_cast<int64_t>(targets.size()) != logits.numel())
        throw ValidationError(cat("bce_with_logits_mean target count ", targets.size(),
                                  " does not match logits ", logits.numel()));
    const float* z = logits.data();
    const int64_t n = logits.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const float v = z[i];
        acc += (v > 0.0f ? v : 0.0f) - v * targets[i] + std::log1p(std::exp(-std::fabs(v)));
    }
    auto xi = logits.impl();
    auto tgt = std::make_shared<std::vector<float>>(std::move(targets));
    return make_result({1}, {static_cast<float>(acc / static_cast<double>(n))},
                       "bce_with_logits_mean", {logits}, [xi, tgt, n](TensorImpl& out) {
                           if (!xi->requires_grad) return;
                           float* dx = acc_grad(*xi);
                           const float g = out.grad[0] / static_cast<float>(n);
                           const float* z = xi->data.data();
                           const float* t = tgt->data();
#pragma omp parallel for
                           for (int64_t i = 0; i < n; ++i)
                               dx[i] += g * (sigmoid_scalar(z[i]) - t[i]);
                       });
}

Tensor gather(const Tensor& x, std::vector<int64_t> indices) {
    if (indices.empty()) throw ValidationError("gather needs at least one index");
    const int64_t n = x.numel();
    std::vector<float> y(indices.size());
    const float* xp = x.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= n)
            throw ValidationError(cat("gather index ", indices[i], " out of range [0,", n,
                                      ")"));
        y[i] = xp[indices[i]];
    }
    auto xi = x.impl();
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
    return make_result({static_cast<int>(idx->size())}, std::move(y), "gather", {x},
                       [xi, idx](TensorImpl& out) {
                           if (!xi->requires_grad) return;
                           float* dx = acc_grad(*xi);
                           const float* g = out.grad.data();
                           for (size_t i = 0; i < idx->size(); ++i) dx[(*idx)[i]] += g[i];
                       });
}

bool all_finite(const Tensor& x) {
    const float* p = x.data();
    for (int64_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace nodule::ops
