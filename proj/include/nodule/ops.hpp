#pragma once

#include <cstdint>
#include <vector>

#include "nodule/tensor.hpp"

namespace nodule::ops {

// Every op records exact reverse-mode gradients when any input requires
// grad and grad mode is on. Forward results are pure functions of the
// inputs (plus mode flags); batch_norm2d in training mode additionally
// updates the running-statistics buffers in place.

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, float eps, float momentum,
                    bool training);
Tensor silu(const Tensor& x);
Tensor maxpool2d(const Tensor& x, int k, int stride, int pad);
Tensor upsample_nearest2x(const Tensor& x);
Tensor concat_channels(const std::vector<Tensor>& xs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);  // ties select a
Tensor maximum(const Tensor& a, const Tensor& b);  // ties select a
Tensor add_scalar(const Tensor& x, float c);
Tensor mul_scalar(const Tensor& x, float c);
Tensor sigmoid(const Tensor& x);
Tensor arctan(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);   // -> shape {1}
Tensor mean(const Tensor& x);  // -> shape {1}

// mean over elements of binary cross-entropy between logits and constant
// targets; numerically stable log1p form.
Tensor bce_with_logits_mean(const Tensor& logits, std::vector<float> targets);

// out[i] = x[indices[i]] on the flat buffer; backward scatter-adds.
Tensor gather(const Tensor& x, std::vector<int64_t> indices);

bool all_finite(const Tensor& x);

float sigmoid_scalar(float x);

}  // namespace nodule::ops
