// Benchmark comparing the serial reference kernels against the OpenMP paths,
// and verifying on the fly that both produce bitwise-identical results.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "ncast/kernels.hpp"
#include "ncast/rng.hpp"
#include "ncast/runtime.hpp"

using namespace ncast;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm caches
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Row {
    std::string name;
    double serial_ms, omp_ms;
    double gflops;
    bool bitwise;
};

void print(const std::vector<Row>& rows) {
    std::printf("%-28s %12s %12s %9s %10s %9s\n", "kernel", "serial (ms)", "omp (ms)", "speedup",
                "GFLOP/s", "bitwise");
    for (const auto& r : rows)
        std::printf("%-28s %12.3f %12.3f %8.2fx %10.2f %9s\n", r.name.c_str(), r.serial_ms, r.omp_ms,
                    r.serial_ms / r.omp_ms, r.gflops, r.bitwise ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
    }
    std::printf("threads: %d\n\n", max_threads());
    Rng rng(7);
    std::vector<Row> rows;

    {
        const int64_t m = 256, n = 1024, k = 576;
        auto A = rng.normal_tensor<float>({m, k});
        auto B = rng.normal_tensor<float>({k, n});
        Tensor<float> Cs({m, n}), Cp({m, n});
        double ts = time_ms([&] { kern::gemm(false, false, m, n, k, 1.0f, A.data(), B.data(), 0.0f, Cs.data(), false); }, reps);
        double tp = time_ms([&] { kern::gemm(false, false, m, n, k, 1.0f, A.data(), B.data(), 0.0f, Cp.data(), true); }, reps);
        rows.push_back({"gemm f32 256x1024x576", ts, tp, 2.0 * m * n * k / (tp * 1e6), bit_equal(Cs, Cp)});
    }
    {
        const int64_t m = 256, n = 1024, k = 576;
        auto A = rng.normal_tensor<double>({m, k});
        auto B = rng.normal_tensor<double>({k, n});
        Tensor<double> Cs({m, n}), Cp({m, n});
        double ts = time_ms([&] { kern::gemm(false, false, m, n, k, 1.0, A.data(), B.data(), 0.0, Cs.data(), false); }, reps);
        double tp = time_ms([&] { kern::gemm(false, false, m, n, k, 1.0, A.data(), B.data(), 0.0, Cp.data(), true); }, reps);
        rows.push_back({"gemm f64 256x1024x576", ts, tp, 2.0 * m * n * k / (tp * 1e6), bit_equal(Cs, Cp)});
    }
    {
        const int64_t C = 64, H = 64, W = 64, kh = 3, kw = 3, stride = 1, pad = 1;
        auto x = rng.normal_tensor<float>({C, H, W});
        const int64_t ho = kern::conv_out_dim(H, kh, stride, pad), wo = kern::conv_out_dim(W, kw, stride, pad);
        Tensor<float> cs({C * kh * kw, ho * wo}), cp(cs.shape());
        double ts = time_ms([&] { kern::im2col(x.data(), C, H, W, kh, kw, stride, pad, cs.data(), false); }, reps);
        double tp = time_ms([&] { kern::im2col(x.data(), C, H, W, kh, kw, stride, pad, cp.data(), true); }, reps);
        rows.push_back({"im2col f32 64x64x64 3x3", ts, tp, 0.0, bit_equal(cs, cp)});

        Tensor<float> xs({C, H, W}), xp({C, H, W});
        double t2s = time_ms([&] { kern::col2im(cs.data(), C, H, W, kh, kw, stride, pad, xs.data(), false); }, reps);
        double t2p = time_ms([&] { kern::col2im(cs.data(), C, H, W, kh, kw, stride, pad, xp.data(), true); }, reps);
        rows.push_back({"col2im f32 64x64x64 3x3", t2s, t2p, 0.0, bit_equal(xs, xp)});
    }
    {
        const int64_t C = 36, H = 256, W = 256, p = 4;
        auto x = rng.normal_tensor<float>({C, H, W});
        Tensor<float> ys({C, H / p, W / p}), yp(ys.shape());
        double ts = time_ms([&] { kern::avg_pool2d(x.data(), C, H, W, p, ys.data(), false); }, reps);
        double tp = time_ms([&] { kern::avg_pool2d(x.data(), C, H, W, p, yp.data(), true); }, reps);
        rows.push_back({"avg_pool4 f32 36x256x256", ts, tp, 0.0, bit_equal(ys, yp)});
    }
    {
        const int64_t n = 1 << 24;
        auto x = rng.normal_tensor<float>({n});
        double vs = 0, vp = 0;
        double ts = time_ms([&] { vs = kern::sum(x.data(), n, false); }, reps);
        double tp = time_ms([&] { vp = kern::sum(x.data(), n, true); }, reps);
        rows.push_back({"chunked sum f32 16M", ts, tp, 0.0, vs == vp});
    }

    print(rows);
    bool all_bitwise = true;
    for (const auto& r : rows) all_bitwise = all_bitwise && r.bitwise;
    if (!all_bitwise) {
        std::fprintf(stderr, "serial/omp mismatch detected\n");
        return 1;
    }
    return 0;
}
