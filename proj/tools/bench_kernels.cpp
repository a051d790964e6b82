// Timing comparison between the OpenMP kernels and the serial reference
// implementations at detector-realistic shapes.
//
//   bench_kernels [threads]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "nodule/kernels.hpp"
#include "nodule/rng.hpp"

using namespace nodule;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<float> random_vec(size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = rng.gaussian();
    return v;
}

struct ConvCase {
    const char* name;
    int n, cin, h, cout, k, stride;
};

void bench_conv(const ConvCase& c, bool run_ref) {
    Rng rng(42);
    const int pad = c.k / 2;
    kern::ConvDims d = kern::conv_dims({c.n, c.cin, c.h, c.h}, {c.cout, c.cin, c.k, c.k},
                                       c.stride, pad);
    auto x = random_vec(static_cast<size_t>(d.n) * d.cin * d.h * d.w, rng);
    auto w = random_vec(static_cast<size_t>(d.cout) * d.cin * d.kh * d.kw, rng);
    auto b = random_vec(d.cout, rng);
    std::vector<float> y(static_cast<size_t>(d.n) * d.cout * d.oh * d.ow);
    std::vector<float> dy = random_vec(y.size(), rng);
    std::vector<float> dx(x.size()), dw(w.size()), db(b.size());

    const double macs = 2.0 * d.n * static_cast<double>(d.cout) * d.oh * d.ow * d.cin *
                        d.kh * d.kw;  // FLOPs (mul+add)

    // warm-up + timed loop
    kern::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d);
    int reps = std::max(1, static_cast<int>(2e9 / macs));
    auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        kern::conv2d_forward(x.data(), w.data(), b.data(), y.data(), d);
    const double fwd_ms = ms_since(t0) / reps;

    t0 = Clock::now();
    for (int r = 0; r < reps; ++r)
        kern::conv2d_backward(x.data(), w.data(), dy.data(), dx.data(), dw.data(),
                              db.data(), d);
    const double bwd_ms = ms_since(t0) / reps;

    double ref_ms = 0.0;
    if (run_ref) {
        std::vector<float> y2(y.size());
        t0 = Clock::now();
        ref::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d);
        ref_ms = ms_since(t0);
    }

    std::printf("%-22s fwd %8.3f ms (%6.2f GFLOP/s)   bwd %8.3f ms (%6.2f GFLOP/s)",
                c.name, fwd_ms, macs / fwd_ms / 1e6, bwd_ms, 3.0 * macs / bwd_ms / 1e6);
    if (run_ref)
        std::printf("   serial-ref %8.3f ms (x%.1f)", ref_ms, ref_ms / fwd_ms);
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    const int threads = argc > 1 ? std::atoi(argv[1]) : 1;
    omp_set_num_threads(threads);
    std::printf("threads: %d\n", threads);

    for (const ConvCase& c : {ConvCase{"stem 3->8 k3 s2 416", 8, 3, 416, 8, 3, 2},
                              ConvCase{"down 16->32 k3 s2", 8, 16, 104, 32, 3, 2},
                              ConvCase{"csp 16->16 k3 104", 8, 16, 104, 16, 3, 1},
                              ConvCase{"csp 32->32 k3 52", 8, 32, 52, 32, 3, 1},
                              ConvCase{"csp 64->64 k3 26", 8, 64, 26, 64, 3, 1},
                              ConvCase{"point 128->64 13", 8, 128, 13, 64, 1, 1},
                              ConvCase{"point 32->16 52", 8, 32, 52, 16, 1, 1}})
        bench_conv(c, c.h <= 104);

    // batch-norm at a representative shape
    {
        Rng rng(7);
        const int n = 8, c = 32, hw = 52 * 52;
        auto x = random_vec(static_cast<size_t>(n) * c * hw, rng);
        std::vector<float> gamma(c, 1.0f), beta(c, 0.0f), rm(c, 0.0f), rv(c, 1.0f);
        std::vector<float> y(x.size()), sm(c), si(c);
        auto t0 = Clock::now();
        for (int r = 0; r < 50; ++r)
            kern::bn_forward_train(x.data(), gamma.data(), beta.data(), y.data(),
                                   rm.data(), rv.data(), n, c, hw, 1e-5f, 0.03f,
                                   sm.data(), si.data());
        const double omp_ms = ms_since(t0) / 50;
        t0 = Clock::now();
        for (int r = 0; r < 50; ++r)
            ref::bn_forward_train(x.data(), gamma.data(), beta.data(), y.data(), n, c,
                                  hw, 1e-5f);
        const double ref_ms = ms_since(t0) / 50;
        std::printf("%-22s omp %8.3f ms   serial-ref %8.3f ms (x%.1f)\n",
                    "bn 8x32x52x52", omp_ms, ref_ms, ref_ms / omp_ms);
    }
    return 0;
}
