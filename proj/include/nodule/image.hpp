#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nodule/tensor.hpp"

namespace nodule {

// 8-bit raster, row-major, interleaved channels (1 = grayscale, 3 = RGB)
struct ImageU8 {
    int w = 0, h = 0, channels = 1;
    std::vector<uint8_t> data;

    static ImageU8 filled(int w, int h, int channels, uint8_t value);
    uint8_t at(int y, int x, int c = 0) const {
        return data[(static_cast<size_t>(y) * w + x) * channels + c];
    }
    void set(int y, int x, int c, uint8_t v) {
        data[(static_cast<size_t>(y) * w + x) * channels + c] = v;
    }
};

// PNG or JPEG; grayscale files load as 1 channel, color as RGB
ImageU8 read_image(const std::string& path);
void write_png_gray(const std::string& path, const ImageU8& img);

// pixel-center bilinear sampling, round-to-nearest
ImageU8 bilinear_resize(const ImageU8& src, int dst_w, int dst_h);

// value/255; grayscale replicated to 3 channels -> Tensor[3,H,W]
Tensor normalize_to_tensor(const ImageU8& img);

}  // namespace nodule
