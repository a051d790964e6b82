#include "nodule/detector.hpp"

#include <cmath>
#include <sstream>

#include "nodule/errors.hpp"
#include "nodule/ops.hpp"
#include "nodule/rng.hpp"

namespace nodule {

namespace {

Tensor kaiming_conv(Rng& rng, int cout, int cin, int k) {
    const float std = std::sqrt(2.0f / static_cast<float>(cin * k * k));
    std::vector<float> w(static_cast<size_t>(cout) * cin * k * k);
    for (auto& v : w) v = std * rng.gaussian();
    return Tensor::from_data({cout, cin, k, k}, std::move(w), true);
}

ConvBlock make_conv(Rng& rng, int cin, int cout, int k, int stride) {
    ConvBlock b;
    b.w = kaiming_conv(rng, cout, cin, k);
    b.gamma = Tensor::full({cout}, 1.0f, true);
    b.beta = Tensor::zeros({cout}, true);
    b.run_mean = Tensor::zeros({cout});
    b.run_var = Tensor::full({cout}, 1.0f);
    b.stride = stride;
    b.pad = k / 2;
    return b;
}

Bottleneck make_bottleneck(Rng& rng, int c, bool shortcut) {
    Bottleneck b;
    b.cv1 = make_conv(rng, c, c, 1, 1);
    b.cv2 = make_conv(rng, c, c, 3, 1);
    b.shortcut = shortcut;
    return b;
}

CspBlock make_csp(Rng& rng, int cin, int cout, int n, bool shortcut) {
    CspBlock b;
    const int ch = cout / 2 > 0 ? cout / 2 : 1;
    b.cv1 = make_conv(rng, cin, ch, 1, 1);
    b.cv2 = make_conv(rng, cin, ch, 1, 1);
    b.cv3 = make_conv(rng, 2 * ch, cout, 1, 1);
    b.m.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) b.m.push_back(make_bottleneck(rng, ch, shortcut));
    return b;
}

SppBlock make_spp(Rng& rng, int cin, int cout) {
    SppBlock b;
    const int ch = cin / 2 > 0 ? cin / 2 : 1;
    b.cv1 = make_conv(rng, cin, ch, 1, 1);
    b.cv2 = make_conv(rng, 4 * ch, cout, 1, 1);
    return b;
}

HeadConv make_head(Rng& rng, int cin, const ModelSpec& spec, int scale) {
    HeadConv h;
    h.w = kaiming_conv(rng, spec.head_channels(), cin, 1);
    std::vector<float> bias(static_cast<size_t>(spec.head_channels()), 0.0f);
    // objectness prior: roughly 8 objects per image at this scale;
    // class prior follows the same family convention
    const float grid = static_cast<float>(spec.grid(scale));
    const float obj_bias = std::log(8.0f / (grid * grid));
    const float cls_bias = std::log(0.6f / (static_cast<float>(spec.num_classes) - 0.99999f));
    const int step = 5 + spec.num_classes;
    for (int a = 0; a < 3; ++a) {
        bias[static_cast<size_t>(a * step + 4)] = obj_bias;
        for (int c = 0; c < spec.num_classes; ++c)
            bias[static_cast<size_t>(a * step + 5 + c)] = cls_bias;
    }
    h.b = Tensor::from_data({spec.head_channels()}, std::move(bias), true);
    return h;
}

void register_conv(std::vector<NamedTensor>& out, const std::string& prefix, ConvBlock& b) {
    out.push_back({prefix + ".conv.weight", b.w, true});
    out.push_back({prefix + ".bn.gamma", b.gamma, true});
    out.push_back({prefix + ".bn.beta", b.beta, true});
    out.push_back({prefix + ".bn.running_mean", b.run_mean, false});
    out.push_back({prefix + ".bn.running_var", b.run_var, false});
}

void register_csp(std::vector<NamedTensor>& out, const std::string& prefix, CspBlock& b) {
    register_conv(out, prefix + ".cv1", b.cv1);
    register_conv(out, prefix + ".cv2", b.cv2);
    register_conv(out, prefix + ".cv3", b.cv3);
    for (size_t i = 0; i < b.m.size(); ++i) {
        register_conv(out, cat(prefix, ".m", i, ".cv1"), b.m[i].cv1);
        register_conv(out, cat(prefix, ".m", i, ".cv2"), b.m[i].cv2);
    }
}

}  // namespace

Tensor ConvBlock::forward(const Tensor& x, bool training) {
    Tensor y = ops::conv2d(x, w, nullptr, stride, pad);
    y = ops::batch_norm2d(y, gamma, beta, run_mean, run_var, kBnEps, kBnMomentum, training);
    return ops::silu(y);
}

Tensor Bottleneck::forward(const Tensor& x, bool training) {
    Tensor y = cv2.forward(cv1.forward(x, training), training);
    return shortcut ? ops::add(x, y) : y;
}

Tensor CspBlock::forward(const Tensor& x, bool training) {
    Tensor a = cv1.forward(x, training);
    for (auto& b : m) a = b.forward(a, training);
    Tensor c = cv2.forward(x, training);
    return cv3.forward(ops::concat_channels({a, c}), training);
}

Tensor SppBlock::forward(const Tensor& x, bool training) {
    Tensor a = cv1.forward(x, training);
    Tensor p5 = ops::maxpool2d(a, 5, 1, 2);
    Tensor p9 = ops::maxpool2d(a, 9, 1, 4);
    Tensor p13 = ops::maxpool2d(a, 13, 1, 6);
    return cv2.forward(ops::concat_channels({a, p5, p9, p13}), training);
}

Tensor HeadConv::forward(const Tensor& x) { return ops::conv2d(x, w, &b, 1, 0); }

Detector::Detector(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    const int c1 = spec_.scaled_channels(64);
    const int c2 = spec_.scaled_channels(128);
    const int c3 = spec_.scaled_channels(256);
    const int c4 = spec_.scaled_channels(512);
    const int c5 = spec_.scaled_channels(1024);
    const int n1 = spec_.scaled_depth(3);
    const int n2 = spec_.scaled_depth(6);
    const int n3 = spec_.scaled_depth(9);
    const int n4 = spec_.scaled_depth(3);
    const int nn = spec_.scaled_depth(3);

    stem_ = make_conv(rng, 3, c1, 3, 2);
    d1_ = make_conv(rng, c1, c2, 3, 2);
    c1_ = make_csp(rng, c2, c2, n1, true);
    d2_ = make_conv(rng, c2, c3, 3, 2);
    c2_ = make_csp(rng, c3, c3, n2, true);
    d3_ = make_conv(rng, c3, c4, 3, 2);
    c3_ = make_csp(rng, c4, c4, n3, true);
    d4_ = make_conv(rng, c4, c5, 3, 2);
    c4_ = make_csp(rng, c5, c5, n4, true);
    spp_ = make_spp(rng, c5, c5);

    lat5_ = make_conv(rng, c5, c4, 1, 1);
    td4_ = make_csp(rng, 2 * c4, c4, nn, false);
    lat4_ = make_conv(rng, c4, c3, 1, 1);
    td3_ = make_csp(rng, 2 * c3, c3, nn, false);
    dn3_ = make_conv(rng, c3, c3, 3, 2);
    bu4_ = make_csp(rng, 2 * c3, c4, nn, false);
    dn4_ = make_conv(rng, c4, c4, 3, 2);
    bu5_ = make_csp(rng, 2 * c4, c5, nn, false);

    h3_ = make_head(rng, c3, spec_, 0);
    h4_ = make_head(rng, c4, spec_, 1);
    h5_ = make_head(rng, c5, spec_, 2);

    register_params();
}

void Detector::register_params() {
    params_.clear();
    register_conv(params_, "backbone.stem", stem_);
    register_conv(params_, "backbone.d1", d1_);
    register_csp(params_, "backbone.c1", c1_);
    register_conv(params_, "backbone.d2", d2_);
    register_csp(params_, "backbone.c2", c2_);
    register_conv(params_, "backbone.d3", d3_);
    register_csp(params_, "backbone.c3", c3_);
    register_conv(params_, "backbone.d4", d4_);
    register_csp(params_, "backbone.c4", c4_);
    register_conv(params_, "backbone.spp.cv1", spp_.cv1);
    register_conv(params_, "backbone.spp.cv2", spp_.cv2);
    register_conv(params_, "neck.lat5", lat5_);
    register_csp(params_, "neck.td4", td4_);
    register_conv(params_, "neck.lat4", lat4_);
    register_csp(params_, "neck.td3", td3_);
    register_conv(params_, "neck.dn3", dn3_);
    register_csp(params_, "neck.bu4", bu4_);
    register_conv(params_, "neck.dn4", dn4_);
    register_csp(params_, "neck.bu5", bu5_);
    params_.push_back({"head.p3.weight", h3_.w, true});
    params_.push_back({"head.p3.bias", h3_.b, true});
    params_.push_back({"head.p4.weight", h4_.w, true});
    params_.push_back({"head.p4.bias", h4_.b, true});
    params_.push_back({"head.p5.weight", h5_.w, true});
    params_.push_back({"head.p5.bias", h5_.b, true});
}

std::array<Tensor, 3> Detector::forward(const Tensor& batch, bool training) {
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != spec_.input_size ||
        batch.dim(3) != spec_.input_size)
        throw ValidationError(cat("detector expects input (N,3,", spec_.input_size, ",",
                                  spec_.input_size, "), got ", shape_str(batch.shape())));
    Tensor x = stem_.forward(batch, training);
    x = c1_.forward(d1_.forward(x, training), training);
    Tensor p3 = c2_.forward(d2_.forward(x, training), training);
    Tensor p4 = c3_.forward(d3_.forward(p3, training), training);
    Tensor p5 = spp_.forward(c4_.forward(d4_.forward(p4, training), training), training);

    Tensor l5 = lat5_.forward(p5, training);
    Tensor t4 = td4_.forward(ops::concat_channels({ops::upsample_nearest2x(l5), p4}), training);
    Tensor l4 = lat4_.forward(t4, training);
    Tensor t3 = td3_.forward(ops::concat_channels({ops::upsample_nearest2x(l4), p3}), training);
    Tensor b4 = bu4_.forward(ops::concat_channels({dn3_.forward(t3, training), l4}), training);
    Tensor b5 = bu5_.forward(ops::concat_channels({dn4_.forward(b4, training), l5}), training);

    return {h3_.forward(t3), h4_.forward(b4), h5_.forward(b5)};
}

int64_t Detector::trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.tensor.numel();
    return n;
}

std::string Detector::summary() const {
    std::ostringstream os;
    for (const auto& p : params_)
        os << p.name << "  " << shape_str(p.tensor.shape()) << "  " << p.tensor.numel()
           << (p.trainable ? "" : "  (buffer)") << "\n";
    os << "trainable parameters: " << trainable_parameter_count() << "\n";
    return os.str();
}

}  // namespace nodule
