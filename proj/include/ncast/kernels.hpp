#pragma once

// Compute kernels used by every layer above. Each kernel has one code body
// shared by a serial and an OpenMP-parallel entry point: parallelism is only
// ever applied across independent output elements (rows, channels, chunks),
// so both paths perform identical arithmetic per element and agree bitwise.
// Reductions are chunked with a fixed chunk size and combined serially in
// index order, which keeps sums independent of the thread count.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ncast/tensor.hpp"

namespace ncast::kern {

inline constexpr int64_t kReduceChunk = 4096;

// Process-wide default execution mode; the serial reference path stays
// available regardless for testing and benchmarking.
inline bool& parallel_default() {
    static bool on = true;
    return on;
}

template <typename F>
void for_n(int64_t n, bool par, F&& body) {
    if (par && n > 1) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) body(i);
    } else {
        for (int64_t i = 0; i < n; ++i) body(i);
    }
}

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
// A is m x k (k x m when trans_a); B is k x n (n x k when trans_b).
template <typename S>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, S alpha, const S* A, const S* B, S beta,
          S* C, bool par) {
    for_n(m, par, [&](int64_t i) {
        S* crow = C + i * n;
        if (beta == S(0)) {
            for (int64_t j = 0; j < n; ++j) crow[j] = S(0);
        } else if (beta != S(1)) {
            for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
        }
        if (!trans_b) {
            for (int64_t kk = 0; kk < k; ++kk) {
                const S a = alpha * (trans_a ? A[kk * m + i] : A[i * k + kk]);
                if (a == S(0)) continue;
                const S* brow = B + kk * n;
                for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
            }
        } else {
            for (int64_t j = 0; j < n; ++j) {
                const S* brow = B + j * k;
                S acc = S(0);
                if (!trans_a) {
                    const S* arow = A + i * k;
                    for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                } else {
                    for (int64_t kk = 0; kk < k; ++kk) acc += A[kk * m + i] * brow[kk];
                }
                crow[j] += alpha * acc;
            }
        }
    });
}

inline int64_t conv_out_dim(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// x[C,H,W] -> col[C*kh*kw, Ho*Wo]; zero padding.
template <typename S>
void im2col(const S* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            S* col, bool par) {
    const int64_t ho = conv_out_dim(H, kh, stride, pad);
    const int64_t wo = conv_out_dim(W, kw, stride, pad);
    const int64_t rows = C * kh * kw;
    for_n(rows, par, [&](int64_t r) {
        const int64_t c = r / (kh * kw);
        const int64_t ki = (r / kw) % kh;
        const int64_t kj = r % kw;
        S* out = col + r * ho * wo;
        const S* xc = x + c * H * W;
        for (int64_t i = 0; i < ho; ++i) {
            const int64_t yi = i * stride - pad + ki;
            for (int64_t j = 0; j < wo; ++j) {
                const int64_t xj = j * stride - pad + kj;
                out[i * wo + j] =
                    (yi >= 0 && yi < H && xj >= 0 && xj < W) ? xc[yi * W + xj] : S(0);
            }
        }
    });
}

// Adjoint of im2col: scatter-add col[C*kh*kw, Ho*Wo] back into x[C,H,W].
// x is overwritten. Parallel across channels so every write target belongs
// to exactly one thread.
template <typename S>
void col2im(const S* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            S* x, bool par) {
    const int64_t ho = conv_out_dim(H, kh, stride, pad);
    const int64_t wo = conv_out_dim(W, kw, stride, pad);
    for_n(C, par, [&](int64_t c) {
        S* xc = x + c * H * W;
        for (int64_t i = 0; i < H * W; ++i) xc[i] = S(0);
        for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
                const S* src = col + ((c * kh + ki) * kw + kj) * ho * wo;
                for (int64_t i = 0; i < ho; ++i) {
                    const int64_t yi = i * stride - pad + ki;
                    if (yi < 0 || yi >= H) continue;
                    for (int64_t j = 0; j < wo; ++j) {
                        const int64_t xj = j * stride - pad + kj;
                        if (xj >= 0 && xj < W) xc[yi * W + xj] += src[i * wo + j];
                    }
                }
            }
        }
    });
}

// x[C,H,W] -> y[C,H/p,W/p], mean over p*p blocks; H and W must divide by p.
template <typename S>
void avg_pool2d(const S* x, int64_t C, int64_t H, int64_t W, int64_t p, S* y, bool par) {
    if (H % p || W % p) throw Error("avg_pool2d: spatial dims must be divisible by pool size");
    const int64_t ho = H / p, wo = W / p;
    const S inv = S(1) / static_cast<S>(p * p);
    for_n(C * ho, par, [&](int64_t r) {
        const int64_t c = r / ho, i = r % ho;
        const S* xc = x + c * H * W;
        S* yrow = y + r * wo;
        for (int64_t j = 0; j < wo; ++j) {
            S acc = S(0);
            for (int64_t di = 0; di < p; ++di)
                for (int64_t dj = 0; dj < p; ++dj) acc += xc[(i * p + di) * W + j * p + dj];
            yrow[j] = acc * inv;
        }
    });
}

// Deterministic chunked reduction: per-chunk partials (parallel) combined
// serially in chunk order. f maps an element to its contribution.
template <typename S, typename F>
double reduce_det(const S* x, int64_t n, bool par, F&& f) {
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    if (nchunks == 0) return 0.0;
    std::vector<double> partial(static_cast<size_t>(nchunks));
    for_n(nchunks, par, [&](int64_t c) {
        const int64_t lo = c * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += f(x[i]);
        partial[static_cast<size_t>(c)] = acc;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

template <typename S>
double sum(const S* x, int64_t n, bool par) {
    return reduce_det(x, n, par, [](S v) { return static_cast<double>(v); });
}

template <typename S>
double sum_sq(const S* x, int64_t n, bool par) {
    return reduce_det(x, n, par, [](S v) {
        const double d = static_cast<double>(v);
        return d * d;
    });
}

}  // namespace ncast::kern
