#pragma once

#include <vector>

namespace nodule::kern {

// All kernels are deterministic for any thread count: every output element
// is written by exactly one thread and inner accumulation order is fixed.

struct ConvDims {
    int n, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int oh, ow;
};

// Validates and computes output size; throws ValidationError on mismatch
// or zero-sized output.
ConvDims conv_dims(const std::vector<int>& xshape, const std::vector<int>& wshape,
                   int stride, int pad);

void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    const ConvDims& d);
// Accumulates into dx / dw / db; any of them may be null to skip.
void conv2d_backward(const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db, const ConvDims& d);

void bn_forward_train(const float* x, const float* gamma, const float* beta, float* y,
                      float* running_mean, float* running_var, int n, int c, int hw,
                      float eps, float momentum, float* saved_mean, float* saved_invstd);
void bn_forward_eval(const float* x, const float* gamma, const float* beta,
                     const float* running_mean, const float* running_var, float* y,
                     int n, int c, int hw, float eps);
void bn_backward_train(const float* x, const float* gamma, const float* dy,
                       const float* saved_mean, const float* saved_invstd, float* dx,
                       float* dgamma, float* dbeta, int n, int c, int hw);
void bn_backward_eval(const float* x, const float* gamma, const float* dy,
                      const float* running_mean, const float* running_var, float* dx,
                      float* dgamma, float* dbeta, int n, int c, int hw, float eps);

struct PoolDims {
    int n, c, h, w;
    int k, stride, pad;
    int oh, ow;
};
PoolDims pool_dims(const std::vector<int>& xshape, int k, int stride, int pad);

// argmax holds the flat input-plane index of the window maximum
// (first occurrence in row-major window scan), -1 for all-padding windows.
void maxpool_forward(const float* x, float* y, int* argmax, const PoolDims& d);
void maxpool_backward(const float* dy, const int* argmax, float* dx, const PoolDims& d);

}  // namespace nodule::kern

namespace nodule::ref {

// Naive serial paths kept as oracles for the OpenMP kernels above.
// Accumulation is in double, so these double as a precision reference.

void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    const kern::ConvDims& d);
void conv2d_backward(const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db, const kern::ConvDims& d);
void bn_forward_train(const float* x, const float* gamma, const float* beta, float* y,
                      int n, int c, int hw, float eps);
void maxpool_forward(const float* x, float* y, const kern::PoolDims& d);

}  // namespace nodule::ref
