#include <doctest.h>

#include <numeric>

#include "ncast/kernels.hpp"
#include "ncast/rng.hpp"
#include "testutil.hpp"

using namespace ncast;

namespace {

// Naive reference gemm, written independently of the kernel under test.
template <typename S>
void gemm_naive(bool ta, bool tb, int64_t m, int64_t n, int64_t k, S alpha, const S* A, const S* B, S beta,
                S* C) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (int64_t kk = 0; kk < k; ++kk) {
                const S a = ta ? A[kk * m + i] : A[i * k + kk];
                const S b = tb ? B[j * k + kk] : B[kk * n + j];
                acc += a * b;
            }
            C[i * n + j] = beta * C[i * n + j] + alpha * acc;
        }
}

}  // namespace

TEST_CASE("gemm matches naive reference for all transpose combinations") {
    Rng rng(11);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            const int64_t m = 13, n = 17, k = 23;
            auto A = rng.normal_tensor<double>(ta ? Shape{k, m} : Shape{m, k});
            auto B = rng.normal_tensor<double>(tb ? Shape{n, k} : Shape{k, n});
            auto C0 = rng.normal_tensor<double>({m, n});
            Tensor<double> Ck = C0, Cn = C0;
            kern::gemm(ta, tb, m, n, k, 1.7, A.data(), B.data(), 0.3, Ck.data(), true);
            gemm_naive(ta, tb, m, n, k, 1.7, A.data(), B.data(), 0.3, Cn.data());
            CAPTURE(ta);
            CAPTURE(tb);
            CHECK(testutil::rel_err_tensor(Ck, Cn) < 1e-13);
        }
}

TEST_CASE("serial and parallel kernel paths agree bitwise") {
    Rng rng(12);
    SUBCASE("gemm") {
        const int64_t m = 31, n = 29, k = 37;
        auto A = rng.normal_tensor<float>({m, k});
        auto B = rng.normal_tensor<float>({k, n});
        Tensor<float> Cs({m, n}), Cp({m, n});
        kern::gemm(false, false, m, n, k, 1.0f, A.data(), B.data(), 0.0f, Cs.data(), false);
        kern::gemm(false, false, m, n, k, 1.0f, A.data(), B.data(), 0.0f, Cp.data(), true);
        CHECK(bit_equal(Cs, Cp));
    }
    SUBCASE("im2col / col2im") {
        const int64_t C = 5, H = 11, W = 9, kh = 3, kw = 3, stride = 2, pad = 1;
        auto x = rng.normal_tensor<float>({C, H, W});
        const int64_t ho = kern::conv_out_dim(H, kh, stride, pad), wo = kern::conv_out_dim(W, kw, stride, pad);
        Tensor<float> cs({C * kh * kw, ho * wo}), cp(cs.shape());
        kern::im2col(x.data(), C, H, W, kh, kw, stride, pad, cs.data(), false);
        kern::im2col(x.data(), C, H, W, kh, kw, stride, pad, cp.data(), true);
        CHECK(bit_equal(cs, cp));
        Tensor<float> xs({C, H, W}), xp({C, H, W});
        kern::col2im(cs.data(), C, H, W, kh, kw, stride, pad, xs.data(), false);
        kern::col2im(cs.data(), C, H, W, kh, kw, stride, pad, xp.data(), true);
        CHECK(bit_equal(xs, xp));
    }
    SUBCASE("avg_pool2d") {
        auto x = rng.normal_tensor<float>({3, 16, 12});
        Tensor<float> ys({3, 4, 3}), yp({3, 4, 3});
        kern::avg_pool2d(x.data(), 3, 16, 12, 4, ys.data(), false);
        kern::avg_pool2d(x.data(), 3, 16, 12, 4, yp.data(), true);
        CHECK(bit_equal(ys, yp));
    }
    SUBCASE("chunked reduction crosses chunk boundaries") {
        for (int64_t n : {1l, 4095l, 4096l, 4097l, 100000l}) {
            auto x = rng.normal_tensor<float>({n});
            CHECK(kern::sum(x.data(), n, false) == kern::sum(x.data(), n, true));
            CHECK(kern::sum_sq(x.data(), n, false) == kern::sum_sq(x.data(), n, true));
        }
    }
}

TEST_CASE("chunked sum matches plain double accumulation") {
    Rng rng(13);
    auto x = rng.normal_tensor<double>({10007});
    double plain = 0;
    for (int64_t i = 0; i < x.numel(); ++i) plain += x[i];
    CHECK(testutil::rel_err(kern::sum(x.data(), x.numel(), true), plain) < 1e-12);
}

TEST_CASE("im2col lays out patches; col2im is its exact adjoint") {
    Rng rng(14);
    const int64_t C = 3, H = 8, W = 7, kh = 3, kw = 2, stride = 2, pad = 1;
    const int64_t ho = kern::conv_out_dim(H, kh, stride, pad), wo = kern::conv_out_dim(W, kw, stride, pad);
    auto x = rng.normal_tensor<double>({C, H, W});

    Tensor<double> col({C * kh * kw, ho * wo});
    kern::im2col(x.data(), C, H, W, kh, kw, stride, pad, col.data(), true);
    // spot-check a few entries against the definition
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < ho; i += 2)
            for (int64_t j = 0; j < wo; j += 2)
                for (int64_t ki = 0; ki < kh; ++ki)
                    for (int64_t kj = 0; kj < kw; ++kj) {
                        const int64_t yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                        const double want =
                            (yi >= 0 && yi < H && xj >= 0 && xj < W) ? x.at({c, yi, xj}) : 0.0;
                        CHECK(col.at({(c * kh + ki) * kw + kj, i * wo + j}) == want);
                    }

    // adjoint identity <u, im2col(x)> == <col2im(u), x>
    auto u = rng.normal_tensor<double>(col.shape());
    Tensor<double> ua({C, H, W});
    kern::col2im(u.data(), C, H, W, kh, kw, stride, pad, ua.data(), true);
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < u.numel(); ++i) lhs += u[i] * col[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += ua[i] * x[i];
    CHECK(testutil::rel_err(lhs, rhs) < 1e-13);
}

TEST_CASE("avg_pool2d averages blocks and rejects ragged sizes") {
    Tensor<double> x({1, 4, 4});
    std::iota(x.data(), x.data() + 16, 0.0);
    Tensor<double> y({1, 2, 2});
    kern::avg_pool2d(x.data(), 1, 4, 4, 2, y.data(), true);
    CHECK(y.at({0, 0, 0}) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(y.at({0, 1, 1}) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
    CHECK_THROWS_AS(kern::avg_pool2d(x.data(), 1, 4, 4, 3, y.data(), true), Error);
}
