#include "nodule/decode.hpp"

#include <algorithm>

#include "nodule/errors.hpp"
#include "nodule/ops.hpp"

namespace nodule {

std::vector<std::vector<CandidateBox>> decode(const std::array<Tensor, 3>& raw,
                                              const ModelSpec& spec) {
    const int nc = spec.num_classes;
    const int step = 5 + nc;
    const int n = raw[0].dim(0);
    const float lim = static_cast<float>(spec.input_size);

    for (int s = 0; s < 3; ++s) {
        const int g = spec.grid(s);
        if (raw[s].shape() != std::vector<int>{n, 3 * step, g, g})
            throw ValidationError(cat("raw head map ", s, " has shape ",
                                      shape_str(raw[s].shape()), ", expected (", n, ",",
                                      3 * step, ",", g, ",", g, ")"));
    }

    std::vector<std::vector<CandidateBox>> out(static_cast<size_t>(n));
    for (int b = 0; b < n; ++b) {
        auto& boxes = out[static_cast<size_t>(b)];
        boxes.reserve(3 * (static_cast<size_t>(spec.grid(0)) * spec.grid(0) +
                           static_cast<size_t>(spec.grid(1)) * spec.grid(1) +
                           static_cast<size_t>(spec.grid(2)) * spec.grid(2)));
        for (int s = 0; s < 3; ++s) {
            const int g = spec.grid(s);
            const float stride = static_cast<float>(spec.strides[static_cast<size_t>(s)]);
            const float* base =
                raw[s].data() + static_cast<int64_t>(b) * 3 * step * g * g;
            const int64_t plane = static_cast<int64_t>(g) * g;
            for (int a = 0; a < 3; ++a) {
                const float aw = spec.anchors[static_cast<size_t>(s)][static_cast<size_t>(a)].first;
                const float ah = spec.anchors[static_cast<size_t>(s)][static_cast<size_t>(a)].second;
                const float* tx = base + (a * step + 0) * plane;
                const float* ty = base + (a * step + 1) * plane;
                const float* tw = base + (a * step + 2) * plane;
                const float* th = base + (a * step + 3) * plane;
                const float* tobj = base + (a * step + 4) * plane;
                for (int cy = 0; cy < g; ++cy) {
                    for (int cx = 0; cx < g; ++cx) {
                        const int64_t i = static_cast<int64_t>(cy) * g + cx;
                        int best_cls = 0;
                        float best_logit = base[(a * step + 5) * plane + i];
                        for (int c = 1; c < nc; ++c) {
                            const float v = base[(a * step + 5 + c) * plane + i];
                            if (v > best_logit) {
                                best_logit = v;
                                best_cls = c;
                            }
                        }
                        CandidateBox box;
                        box.confidence = ops::sigmoid_scalar(tobj[i]) *
                                         ops::sigmoid_scalar(best_logit);
                        box.class_id = best_cls;
                        const float px =
                            (2.0f * ops::sigmoid_scalar(tx[i]) - 0.5f + static_cast<float>(cx)) * stride;
                        const float py =
                            (2.0f * ops::sigmoid_scalar(ty[i]) - 0.5f + static_cast<float>(cy)) * stride;
                        const float sw = 2.0f * ops::sigmoid_scalar(tw[i]);
                        const float sh = 2.0f * ops::sigmoid_scalar(th[i]);
                        const float pw = sw * sw * aw;
                        const float ph = sh * sh * ah;
                        box.x_min = std::clamp(px - pw * 0.5f, 0.0f, lim);
                        box.y_min = std::clamp(py - ph * 0.5f, 0.0f, lim);
                        box.x_max = std::clamp(px + pw * 0.5f, 0.0f, lim);
                        box.y_max = std::clamp(py + ph * 0.5f, 0.0f, lim);
                        boxes.push_back(box);
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace nodule
