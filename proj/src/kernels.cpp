#include "nodule/kernels.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstring>

#include "nodule/errors.hpp"

namespace nodule::kern {

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ws, int stride,
                   int pad) {
    if (xs.size() != 4 || ws.size() != 4)
        throw ValidationError(cat("conv2d expects rank-4 input and weight, got ",
                                  shape_str(xs), " and ", shape_str(ws)));
    if (xs[1] != ws[1])
        throw ValidationError(cat("conv2d channel mismatch: input ", shape_str(xs),
                                  " vs weight ", shape_str(ws)));
    if (stride < 1 || pad < 0)
        throw ValidationError(cat("conv2d invalid stride ", stride, " / pad ", pad));
    ConvDims d;
    d.n = xs[0];
    d.cin = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.cout = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.stride = stride;
    d.pad = pad;
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw || d.oh < 1 || d.ow < 1)
        throw ValidationError(cat("conv2d zero-sized output for input ", shape_str(xs),
                                  " weight ", shape_str(ws), " stride ", stride, " pad ",
                                  pad));
    return d;
}

namespace {

// colT layout: one row of row_stride floats per output pixel, the first
// K = cin*kh*kw of them the patch, the rest zero padding (row_stride is
// rounded up to the SIMD width so the dot kernels see aligned lengths).
void im2col(const float* x, float* colT, const ConvDims& d, int row_stride) {
    const int K = d.cin * d.kh * d.kw;
    const int64_t plane = static_cast<int64_t>(d.h) * d.w;
#pragma omp parallel for
    for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
            float* row = colT + (static_cast<int64_t>(oy) * d.ow + ox) * row_stride;
            for (int k = K; k < row_stride; ++k) row[k] = 0.0f;
            const int iy0 = oy * d.stride - d.pad;
            const int ix0 = ox * d.stride - d.pad;
            for (int c = 0; c < d.cin; ++c) {
                const float* xc = x + c * plane;
                for (int i = 0; i < d.kh; ++i) {
                    const int iy = iy0 + i;
                    float* dst = row + (c * d.kh + i) * d.kw;
                    if (iy < 0 || iy >= d.h) {
                        for (int j = 0; j < d.kw; ++j) dst[j] = 0.0f;
                        continue;
                    }
                    const float* src = xc + static_cast<int64_t>(iy) * d.w;
                    for (int j = 0; j < d.kw; ++j) {
                        const int ix = ix0 + j;
                        dst[j] = (ix < 0 || ix >= d.w) ? 0.0f : src[ix];
                    }
                }
            }
        }
    }
}

// dx[n] scatter from dcolT; channels are independent, so parallel over c.
void col2im_acc(const float* dcolT, float* dx, const ConvDims& d) {
    const int K = d.cin * d.kh * d.kw;
    const int64_t plane = static_cast<int64_t>(d.h) * d.w;
#pragma omp parallel for
    for (int c = 0; c < d.cin; ++c) {
        float* dxc = dx + c * plane;
        for (int oy = 0; oy < d.oh; ++oy) {
            const int iy0 = oy * d.stride - d.pad;
            for (int ox = 0; ox < d.ow; ++ox) {
                const int ix0 = ox * d.stride - d.pad;
                const float* row =
                    dcolT + (static_cast<int64_t>(oy) * d.ow + ox) * K + c * d.kh * d.kw;
                for (int i = 0; i < d.kh; ++i) {
                    const int iy = iy0 + i;
                    if (iy < 0 || iy >= d.h) continue;
                    float* dst = dxc + static_cast<int64_t>(iy) * d.w;
                    for (int j = 0; j < d.kw; ++j) {
                        const int ix = ix0 + j;
                        if (ix >= 0 && ix < d.w) dst[ix] += row[i * d.kw + j];
                    }
                }
            }
        }
    }
}

constexpr int kSimdPad = 16;

inline int padded(int k) { return (k + kSimdPad - 1) & ~(kSimdPad - 1); }

// Y[m][p] = dot(W row m, colT row p); 4x4 register blocking over rows of
// length Kp (multiple of kSimdPad, zero-padded tails).
void gemm_dot(const float* W, const float* colT, const float* bias, float* Y, int M,
              int P, int Kp) {
#pragma omp parallel for
    for (int m0 = 0; m0 < M; m0 += 4) {
        const int mr = std::min(4, M - m0);
        const float* wr[4];
        float* yr[4];
        float br[4];
        for (int m = 0; m < 4; ++m) {
            const int mi = m0 + std::min(m, mr - 1);
            wr[m] = W + static_cast<int64_t>(mi) * Kp;
            yr[m] = Y + static_cast<int64_t>(mi) * P;
            br[m] = bias ? bias[mi] : 0.0f;
        }
        int p = 0;
        for (; p + 4 <= P; p += 4) {
            const float* p0 = colT + static_cast<int64_t>(p) * Kp;
            const float* p1 = p0 + Kp;
            const float* p2 = p1 + Kp;
            const float* p3 = p2 + Kp;
            float a00 = 0, a01 = 0, a02 = 0, a03 = 0;
            float a10 = 0, a11 = 0, a12 = 0, a13 = 0;
            float a20 = 0, a21 = 0, a22 = 0, a23 = 0;
            float a30 = 0, a31 = 0, a32 = 0, a33 = 0;
            const float* w0 = wr[0];
            const float* w1 = wr[1];
            const float* w2 = wr[2];
            const float* w3 = wr[3];
#pragma omp simd reduction(+ : a00, a01, a02, a03, a10, a11, a12, a13, a20, a21, a22, \
                               a23, a30, a31, a32, a33)
            for (int k = 0; k < Kp; ++k) {
                const float q0 = p0[k], q1 = p1[k], q2 = p2[k], q3 = p3[k];
                const float v0 = w0[k], v1 = w1[k], v2 = w2[k], v3 = w3[k];
                a00 += v0 * q0;
                a01 += v0 * q1;
                a02 += v0 * q2;
                a03 += v0 * q3;
                a10 += v1 * q0;
                a11 += v1 * q1;
                a12 += v1 * q2;
                a13 += v1 * q3;
                a20 += v2 * q0;
                a21 += v2 * q1;
                a22 += v2 * q2;
                a23 += v2 * q3;
                a30 += v3 * q0;
                a31 += v3 * q1;
                a32 += v3 * q2;
                a33 += v3 * q3;
            }
            const float acc[4][4] = {{a00, a01, a02, a03},
                                     {a10, a11, a12, a13},
                                     {a20, a21, a22, a23},
                                     {a30, a31, a32, a33}};
            for (int m = 0; m < mr; ++m)
                for (int j = 0; j < 4; ++j) yr[m][p + j] = acc[m][j] + br[m];
        }
        for (; p < P; ++p) {
            const float* pr = colT + static_cast<int64_t>(p) * Kp;
            for (int m = 0; m < mr; ++m) {
                const float* wm = wr[m];
                float acc = 0;
#pragma omp simd reduction(+ : acc)
                for (int k = 0; k < Kp; ++k) acc += wm[k] * pr[k];
                yr[m][p] = acc + br[m];
            }
        }
    }
}

bool is_pointwise(const ConvDims& d) {
    return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;
}

}  // namespace

void conv2d_forward(const float* x, const float* w, const float* bias, float* y,
                    const ConvDims& d) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.oh) * d.ow;
    const int K = d.cin * d.kh * d.kw;
    if (is_pointwise(d)) {
        // y[m] = bias + sum_c w[m,c] * x[c]; row-at-a-time axpy keeps the
        // inner loop contiguous in both x and y.
        for (int n = 0; n < d.n; ++n) {
            const float* xn = x + n * d.cin * in_plane;
            float* yn = y + n * d.cout * out_plane;
#pragma omp parallel for
            for (int m = 0; m < d.cout; ++m) {
                float* yr = yn + m * out_plane;
                const float b = bias ? bias[m] : 0.0f;
                for (int64_t p = 0; p < out_plane; ++p) yr[p] = b;
                const float* wr = w + static_cast<int64_t>(m) * d.cin;
                for (int c = 0; c < d.cin; ++c) {
                    const float wc = wr[c];
                    const float* xr = xn + c * in_plane;
#pragma omp simd
                    for (int64_t p = 0; p < out_plane; ++p) yr[p] += wc * xr[p];
                }
            }
        }
        return;
    }
    const int Kp = padded(K);
    std::vector<float> wpad(static_cast<size_t>(d.cout) * Kp, 0.0f);
    for (int m = 0; m < d.cout; ++m)
        std::copy_n(w + static_cast<int64_t>(m) * K, K, wpad.data() + static_cast<int64_t>(m) * Kp);
    std::vector<float> colT(static_cast<size_t>(out_plane) * Kp);
    for (int n = 0; n < d.n; ++n) {
        im2col(x + static_cast<int64_t>(n) * d.cin * in_plane, colT.data(), d, Kp);
        gemm_dot(wpad.data(), colT.data(), bias,
                 y + static_cast<int64_t>(n) * d.cout * out_plane, d.cout,
                 static_cast<int>(out_plane), Kp);
    }
}

void conv2d_backward(const float* x, const float* w, const float* dy, float* dx,
                     float* dw, float* db, const ConvDims& d) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.oh) * d.ow;
    const int K = d.cin * d.kh * d.kw;

    if (db) {
#pragma omp parallel for
        for (int m = 0; m < d.cout; ++m) {
            float acc = 0.0f;
            for (int n = 0; n < d.n; ++n) {
                const float* r = dy + (static_cast<int64_t>(n) * d.cout + m) * out_plane;
#pragma omp simd reduction(+ : acc)
                for (int64_t p = 0; p < out_plane; ++p) acc += r[p];
            }
            db[m] += acc;
        }
    }

    if (is_pointwise(d)) {
        for (int n = 0; n < d.n; ++n) {
            const float* xn = x + n * d.cin * in_plane;
            const float* dyn = dy + n * d.cout * out_plane;
            if (dx) {
                float* dxn = dx + n * d.cin * in_plane;
#pragma omp parallel for
                for (int c = 0; c < d.cin; ++c) {
                    float* dxr = dxn + c * in_plane;
                    for (int m = 0; m < d.cout; ++m) {
                        const float wc = w[static_cast<int64_t>(m) * d.cin + c];
                        const float* dyr = dyn + m * out_plane;
#pragma omp simd
                        for (int64_t p = 0; p < in_plane; ++p) dxr[p] += wc * dyr[p];
                    }
                }
            }
            if (dw) {
#pragma omp parallel for
                for (int m = 0; m < d.cout; ++m) {
                    const float* dyr = dyn + m * out_plane;
                    float* dwr = dw + static_cast<int64_t>(m) * d.cin;
                    for (int c = 0; c < d.cin; ++c) {
                        const float* xr = xn + c * in_plane;
                        float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
                        for (int64_t p = 0; p < in_plane; ++p) acc += dyr[p] * xr[p];
                        dwr[c] += acc;
                    }
                }
            }
        }
        return;
    }

    std::vector<float> colT;
    std::vector<float> dcolT;
    if (dw) colT.resize(static_cast<size_t>(out_plane) * K);
    if (dx) dcolT.resize(static_cast<size_t>(out_plane) * K);
    for (int n = 0; n < d.n; ++n) {
        const float* dyn = dy + static_cast<int64_t>(n) * d.cout * out_plane;
        if (dw) {
            im2col(x + static_cast<int64_t>(n) * d.cin * in_plane, colT.data(), d, K);
#pragma omp parallel for
            for (int m = 0; m < d.cout; ++m) {
                const float* dyr = dyn + m * out_plane;
                float* dwr = dw + static_cast<int64_t>(m) * K;
                for (int64_t p = 0; p < out_plane; ++p) {
                    const float g = dyr[p];
                    if (g == 0.0f) continue;
                    const float* row = colT.data() + p * K;
#pragma omp simd
                    for (int k = 0; k < K; ++k) dwr[k] += g * row[k];
                }
            }
        }
        if (dx) {
            // dcolT[p] = sum_m dy[m,p] * W[m]
#pragma omp parallel for
            for (int64_t p = 0; p < out_plane; ++p) {
                float* row = dcolT.data() + p * K;
                for (int k = 0; k < K; ++k) row[k] = 0.0f;
                for (int m = 0; m < d.cout; ++m) {
                    const float g = dyn[m * out_plane + p];
                    if (g == 0.0f) continue;
                    const float* wr = w + static_cast<int64_t>(m) * K;
#pragma omp simd
                    for (int k = 0; k < K; ++k) row[k] += g * wr[k];
                }
            }
            col2im_acc(dcolT.data(), dx + static_cast<int64_t>(n) * d.cin * in_plane, d);
        }
    }
}

void bn_forward_train(const float* x, const float* gamma, const float* beta, float* y,
                      float* running_mean, float* running_var, int n, int c, int hw,
                      float eps, float momentum, float* saved_mean, float* saved_invstd) {
    const int64_t m = static_cast<int64_t>(n) * hw;
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* r = x + (static_cast<int64_t>(b) * c + ch) * hw;
            for (int i = 0; i < hw; ++i) sum += r[i];
        }
        const double mean = sum / static_cast<double>(m);
        double ss = 0.0;
        for (int b = 0; b < n; ++b) {
            const float* r = x + (static_cast<int64_t>(b) * c + ch) * hw;
            for (int i = 0; i < hw; ++i) {
                const double dlt = r[i] - mean;
                ss += dlt * dlt;
            }
        }
        const double var = ss / static_cast<double>(m);  // biased
        const float fmean = static_cast<float>(mean);
        const float finvstd = static_cast<float>(1.0 / std::sqrt(var + eps));
        saved_mean[ch] = fmean;
        saved_invstd[ch] = finvstd;
        running_mean[ch] =
            (1.0f - momentum) * running_mean[ch] + momentum * fmean;
        running_var[ch] =
            (1.0f - momentum) * running_var[ch] + momentum * static_cast<float>(var);
        const float g = gamma[ch], bt = beta[ch];
        for (int b = 0; b < n; ++b) {
            const float* r = x + (static_cast<int64_t>(b) * c + ch) * hw;
            float* o = y + (static_cast<int64_t>(b) * c + ch) * hw;
#pragma omp simd
            for (int i = 0; i < hw; ++i) o[i] = g * (r[i] - fmean) * finvstd + bt;
        }
    }
}

void bn_forward_eval(const float* x, const float* gamma, const float* beta,
                     const float* running_mean, const float* running_var, float* y, int n,
                     int c, int hw, float eps) {
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const float invstd = 1.0f / std::sqrt(running_var[ch] + eps);
        const float g = gamma[ch] * invstd;
        const float b0 = beta[ch] - gamma[ch] * running_mean[ch] * invstd;
        for (int b = 0; b < n; ++b) {
            const float* r = x + (static_cast<int64_t>(b) * c + ch) * hw;
            float* o = y + (static_cast<int64_t>(b) * c + ch) * hw;
#pragma omp simd
            for (int i = 0; i < hw; ++i) o[i] = g * r[i] + b0;
        }
    }
}

void bn_backward_train(const float* x, const float* gamma, const float* dy,
                       const float* saved_mean, const float* saved_invstd, float* dx,
                       float* dgamma, float* dbeta, int n, int c, int hw) {
    const double m = static_cast<double>(n) * hw;
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const float mean = saved_mean[ch], invstd = saved_invstd[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
            const float* xr = x + off;
            const float* gr = dy + off;
            for (int i = 0; i < hw; ++i) {
                sum_dy += gr[i];
                sum_dy_xhat += gr[i] * static_cast<double>((xr[i] - mean) * invstd);
            }
        }
        if (dbeta) dbeta[ch] += static_cast<float>(sum_dy);
        if (dgamma) dgamma[ch] += static_cast<float>(sum_dy_xhat);
        if (dx) {
            const float k1 = gamma[ch] * invstd;
            const float mdy = static_cast<float>(sum_dy / m);
            const float mdyx = static_cast<float>(sum_dy_xhat / m);
            for (int b = 0; b < n; ++b) {
                const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
                const float* xr = x + off;
                const float* gr = dy + off;
                float* o = dx + off;
#pragma omp simd
                for (int i = 0; i < hw; ++i) {
                    const float xhat = (xr[i] - mean) * invstd;
                    o[i] += k1 * (gr[i] - mdy - xhat * mdyx);
                }
            }
        }
    }
}

void bn_backward_eval(const float* x, const float* gamma, const float* dy,
                      const float* running_mean, const float* running_var, float* dx,
                      float* dgamma, float* dbeta, int n, int c, int hw, float eps) {
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const float invstd = 1.0f / std::sqrt(running_var[ch] + eps);
        const float mean = running_mean[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
            const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
            const float* xr = x + off;
            const float* gr = dy + off;
            for (int i = 0; i < hw; ++i) {
                sum_dy += gr[i];
                sum_dy_xhat += gr[i] * static_cast<double>((xr[i] - mean) * invstd);
            }
        }
        if (dbeta) dbeta[ch] += static_cast<float>(sum_dy);
        if (dgamma) dgamma[ch] += static_cast<float>(sum_dy_xhat);
        if (dx) {
            const float k1 = gamma[ch] * invstd;
            for (int b = 0; b < n; ++b) {
                const int64_t off = (static_cast<int64_t>(b) * c + ch) * hw;
                const float* gr = dy + off;
                float* o = dx + off;
#pragma omp simd
                for (int i = 0; i < hw; ++i) o[i] += k1 * gr[i];
            }
        }
    }
}

PoolDims pool_dims(const std::vector<int>& xs, int k, int stride, int pad) {
    if (xs.size() != 4)
        throw ValidationError(cat("maxpool2d expects rank-4 input, got ", shape_str(xs)));
    if (k < 1 || stride < 1 || pad < 0)
        throw ValidationError(cat("maxpool2d invalid k ", k, " / stride ", stride,
                                  " / pad ", pad));
    PoolDims d;
    d.n = xs[0];
    d.c = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.k = k;
    d.stride = stride;
    d.pad = pad;
    if (d.h + 2 * pad < k || d.w + 2 * pad < k)
        throw ValidationError(cat("maxpool2d window ", k, " larger than padded input ",
                                  shape_str(xs), " with pad ", pad));
    d.oh = (d.h + 2 * pad - k) / stride + 1;
    d.ow = (d.w + 2 * pad - k) / stride + 1;
    return d;
}

void maxpool_forward(const float* x, float* y, int* argmax, const PoolDims& d) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.oh) * d.ow;
#pragma omp parallel for
    for (int64_t nc = 0; nc < static_cast<int64_t>(d.n) * d.c; ++nc) {
        const float* xp = x + nc * in_plane;
        float* yp = y + nc * out_plane;
        int* ap = argmax + nc * out_plane;
        for (int oy = 0; oy < d.oh; ++oy) {
            for (int ox = 0; ox < d.ow; ++ox) {
                const int iy0 = oy * d.stride - d.pad;
                const int ix0 = ox * d.stride - d.pad;
                float best = -FLT_MAX;
                int besti = -1;
                for (int i = 0; i < d.k; ++i) {
                    const int iy = iy0 + i;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int j = 0; j < d.k; ++j) {
                        const int ix = ix0 + j;
                        if (ix < 0 || ix >= d.w) continue;
                        const float v = xp[static_cast<int64_t>(iy) * d.w + ix];
                        if (v > best) {  // strict: ties keep first occurrence
                            best = v;
                            besti = iy * d.w + ix;
                        }
                    }
                }
                yp[oy * d.ow + ox] = best;
                ap[oy * d.ow + ox] = besti;
            }
        }
    }
}

void maxpool_backward(const float* dy, const int* argmax, float* dx, const PoolDims& d) {
    const int64_t in_plane = static_cast<int64_t>(d.h) * d.w;
    const int64_t out_plane = static_cast<int64_t>(d.oh) * d.ow;
#pragma omp parallel for
    for (int64_t nc = 0; nc < static_cast<int64_t>(d.n) * d.c; ++nc) {
        const float* gp = dy + nc * out_plane;
        const int* ap = argmax + nc * out_plane;
        float* dp = dx + nc * in_plane;
        for (int64_t p = 0; p < out_plane; ++p)
            if (ap[p] >= 0) dp[ap[p]] += gp[p];
    }
}

}  // namespace nodule::kern
