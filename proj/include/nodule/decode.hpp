#pragma once

#include <array>
#include <vector>

#include "nodule/model_spec.hpp"
#include "nodule/tensor.hpp"

namespace nodule {

// Box in network-input pixel coordinates, corners clipped to
// [0, input_size]; confidence = sigmoid(obj) * sigmoid(best class logit).
struct CandidateBox {
    float x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    float confidence = 0;
    int class_id = 0;
};

// Decodes every cell/anchor of the three raw head maps; no thresholding.
// For cell (cx,cy), anchor (aw,ah), stride s:
//   center = (2*sigmoid(t) - 0.5 + cell) * s
//   size   = (2*sigmoid(t))^2 * anchor
std::vector<std::vector<CandidateBox>> decode(const std::array<Tensor, 3>& raw,
                                              const ModelSpec& spec);

}  // namespace nodule
