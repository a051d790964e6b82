#include <cfloat>
#include <cmath>

#include "nodule/kernels.hpp"

namespace nodule::ref {

using kern::ConvDims;
using kern::PoolDims;

namespace {
inline float at(const float* x, const ConvDims& d, int n, int c, int y, int xx) {
    if (y < 0 || y >= d.h || xx < 0 || xx >= d.w) return 0.0f;
    return x[((static_cast<int64_t>(n) * d.cin + c) * d.h + y) * d.w + xx];
}
}  // namespace

void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    const ConvDims& d) {
    for (int n = 0; n < d.n; ++n)
        for (int m = 0; m < d.cout; ++m)
            for (int oy = 0; oy < d.oh; ++oy)
                for (int ox = 0; ox < d.ow; ++ox) {
                    double acc = bias ? bias[m] : 0.0;
                    for (int c = 0; c < d.cin; ++c)
                        for (int i = 0; i < d.kh; ++i)
                            for (int j = 0; j < d.kw; ++j)
                                acc += static_cast<double>(
                                           w[((static_cast<int64_t>(m) * d.cin + c) * d.kh +
                                              i) *
                                                 d.kw +
                                             j]) *
                                       at(x, d, n, c, oy * d.stride - d.pad + i,
                                          ox * d.stride - d.pad + j);
                    y[((static_cast<int64_t>(n) * d.cout + m) * d.oh + oy) * d.ow + ox] =
                        static_cast<float>(acc);
                }
}

void conv2d_backward(const float* x, const float* w, const float* dy, float* dx, float* dw,
                     float* db, const ConvDims& d) {
    for (int n = 0; n < d.n; ++n)
        for (int m = 0; m < d.cout; ++m)
            for (int oy = 0; oy < d.oh; ++oy)
                for (int ox = 0; ox < d.ow; ++ox) {
                    const float g =
                        dy[((static_cast<int64_t>(n) * d.cout + m) * d.oh + oy) * d.ow + ox];
                    if (db) db[m] += g;
                    for (int c = 0; c < d.cin; ++c)
                        for (int i = 0; i < d.kh; ++i)
                            for (int j = 0; j < d.kw; ++j) {
                                const int iy = oy * d.stride - d.pad + i;
                                const int ix = ox * d.stride - d.pad + j;
                                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                                const int64_t xi =
                                    ((static_cast<int64_t>(n) * d.cin + c) * d.h + iy) * d.w +
                                    ix;
                                const int64_t wi =
                                    ((static_cast<int64_t>(m) * d.cin + c) * d.kh + i) * d.kw +
                                    j;
                                if (dw) dw[wi] += g * x[xi];
                                if (dx) dx[xi] += g * w[wi];
                            }
                }
}

void bn_forward_train(const float* x, const float* gamma, const float* beta, float* y,
                      int n, int c, int hw, float eps) {
    const double m = static_cast<double>(n) * hw;
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < hw; ++i)
                sum += x[(static_cast<int64_t>(b) * c + ch) * hw + i];
        const double mean = sum / m;
        double ss = 0.0;
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < hw; ++i) {
                const double dlt = x[(static_cast<int64_t>(b) * c + ch) * hw + i] - mean;
                ss += dlt * dlt;
            }
        const double invstd = 1.0 / std::sqrt(ss / m + eps);
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < hw; ++i) {
                const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw + i;
                y[off] = static_cast<float>(gamma[ch] * (x[off] - mean) * invstd + beta[ch]);
            }
    }
}

void maxpool_forward(const float* x, float* y, const PoolDims& d) {
    for (int n = 0; n < d.n; ++n)
        for (int c = 0; c < d.c; ++c)
            for (int oy = 0; oy < d.oh; ++oy)
                for (int ox = 0; ox < d.ow; ++ox) {
                    float best = -FLT_MAX;
                    for (int i = 0; i < d.k; ++i)
                        for (int j = 0; j < d.k; ++j) {
                            const int iy = oy * d.stride - d.pad + i;
                            const int ix = ox * d.stride - d.pad + j;
                            if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                            best = std::max(
                                best,
                                x[((static_cast<int64_t>(n) * d.c + c) * d.h + iy) * d.w + ix]);
                        }
                    y[((static_cast<int64_t>(n) * d.c + c) * d.oh + oy) * d.ow + ox] = best;
                }
}

}  // namespace nodule::ref
