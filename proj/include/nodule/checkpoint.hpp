#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nodule/tensor.hpp"

namespace nodule {

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;  // false for BN running statistics
};

// NDCK binary format, little-endian throughout:
//   "NDCK" | version u32 = 1 | count u32 |
//   per tensor, lexicographic by name:
//     name_len u16 | name bytes | rank u8 | dims u32[rank] | f32 data
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params);

// Fills the tensors in `params` from the file; the name sets and shapes
// must match exactly.
void load_checkpoint(const std::string& path, std::vector<NamedTensor>& params);

}  // namespace nodule
