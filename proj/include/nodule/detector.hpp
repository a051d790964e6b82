#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nodule/checkpoint.hpp"
#include "nodule/model_spec.hpp"
#include "nodule/tensor.hpp"

namespace nodule {

class Rng;

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.03f;

// conv (no bias) + batch norm + SiLU
struct ConvBlock {
    Tensor w, gamma, beta, run_mean, run_var;
    int stride = 1, pad = 0;
    Tensor forward(const Tensor& x, bool training);
};

struct Bottleneck {
    ConvBlock cv1, cv2;
    bool shortcut = true;
    Tensor forward(const Tensor& x, bool training);
};

// cross-stage-partial block: processed path (cv1 + bottlenecks) and bypass
// path (cv2) concatenated, then merged by cv3
struct CspBlock {
    ConvBlock cv1, cv2, cv3;
    std::vector<Bottleneck> m;
    Tensor forward(const Tensor& x, bool training);
};

// spatial pyramid pooling: parallel max-pools k = 5, 9, 13 concatenated
struct SppBlock {
    ConvBlock cv1, cv2;
    Tensor forward(const Tensor& x, bool training);
};

// 1x1 conv with bias, no norm or activation
struct HeadConv {
    Tensor w, b;
    Tensor forward(const Tensor& x);
};

// CSP backbone -> SPP -> PAN neck -> three anchor heads. Parameters are
// initialized deterministically from the seed.
class Detector {
public:
    Detector(const ModelSpec& spec, uint64_t seed);

    // batch: [N,3,S,S] with S = spec.input_size, values in [0,1].
    // Returns raw maps [N, 3*(5+nc), S/8, S/8], ..16.., ..32..
    std::array<Tensor, 3> forward(const Tensor& batch, bool training);

    const ModelSpec& spec() const { return spec_; }
    std::vector<NamedTensor>& params() { return params_; }
    const std::vector<NamedTensor>& params() const { return params_; }
    int64_t trainable_parameter_count() const;
    std::string summary() const;

private:
    ModelSpec spec_;
    ConvBlock stem_, d1_, d2_, d3_, d4_;
    CspBlock c1_, c2_, c3_, c4_;
    SppBlock spp_;
    ConvBlock lat5_, lat4_, dn3_, dn4_;
    CspBlock td4_, td3_, bu4_, bu5_;
    HeadConv h3_, h4_, h5_;
    std::vector<NamedTensor> params_;

    void register_params();
};

}  // namespace nodule
