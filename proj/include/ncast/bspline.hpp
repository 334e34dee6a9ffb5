#pragma once

// Uniform B-spline basis (Cox-de Boor) on an extended knot grid, plus the
// autodiff op that expands each activation into its basis values along the
// channel axis. The basis forms a partition of unity on [lo, hi]; inputs are
// expected pre-squashed into that range.

#include <vector>

#include "ncast/autodiff.hpp"

namespace ncast {

template <typename S>
class BSpline {
public:
    BSpline(int grid_size, int order, S lo, S hi) : order_(order) {
        if (grid_size < 1 || order < 1 || !(hi > lo)) throw Error("bspline: bad grid parameters");
        const S h = (hi - lo) / static_cast<S>(grid_size);
        const int nk = grid_size + 1 + 2 * order;
        knots_.resize(static_cast<size_t>(nk));
        for (int i = 0; i < nk; ++i) knots_[static_cast<size_t>(i)] = lo + h * static_cast<S>(i - order);
        lo_ = lo;
        hi_ = hi;
        h_ = h;
    }

    int num_basis() const { return static_cast<int>(knots_.size()) - 1 - order_; }
    int order() const { return order_; }

    // Values of every basis function at x; optionally their derivatives.
    // x outside the knot span is clamped to the nearest interval, so the
    // partition of unity extends to the closed interval [lo, hi].
    void eval(S x, S* vals, S* derivs = nullptr) const {
        const int nk = static_cast<int>(knots_.size());
        const int nb = num_basis();
        // degree-0 indicator
        int j = static_cast<int>(std::floor((x - knots_[0]) / h_));
        j = std::max(0, std::min(nk - 2, j));
        std::vector<S> b(static_cast<size_t>(nk - 1), S(0));
        b[static_cast<size_t>(j)] = S(1);
        std::vector<S> bm1;  // degree order-1 values, kept for the derivative
        for (int p = 1; p <= order_; ++p) {
            if (derivs && p == order_) bm1.assign(b.begin(), b.end());
            for (int i = 0; i + p + 1 < nk; ++i) {
                const S dl = knots_[static_cast<size_t>(i + p)] - knots_[static_cast<size_t>(i)];
                const S dr = knots_[static_cast<size_t>(i + p + 1)] - knots_[static_cast<size_t>(i + 1)];
                S v = S(0);
                if (dl > S(0)) v += (x - knots_[static_cast<size_t>(i)]) / dl * b[static_cast<size_t>(i)];
                if (dr > S(0))
                    v += (knots_[static_cast<size_t>(i + p + 1)] - x) / dr * b[static_cast<size_t>(i + 1)];
                b[static_cast<size_t>(i)] = v;
            }
        }
        for (int i = 0; i < nb; ++i) vals[i] = b[static_cast<size_t>(i)];
        if (derivs) {
            const S p = static_cast<S>(order_);
            for (int i = 0; i < nb; ++i) {
                const S dl = knots_[static_cast<size_t>(i + order_)] - knots_[static_cast<size_t>(i)];
                const S dr = knots_[static_cast<size_t>(i + order_ + 1)] - knots_[static_cast<size_t>(i + 1)];
                S d = S(0);
                if (dl > S(0)) d += bm1[static_cast<size_t>(i)] / dl;
                if (dr > S(0)) d -= bm1[static_cast<size_t>(i + 1)] / dr;
                derivs[i] = p * d;
            }
        }
    }

    S lo() const { return lo_; }
    S hi() const { return hi_; }

private:
    int order_;
    std::vector<S> knots_;
    S lo_, hi_, h_;
};

namespace ad {

// x[N,C,H,W] -> [N, C*B, H, W]: output channel c*B + j holds basis_j(x[:,c]).
template <typename S>
Var<S> basis_expand(const Var<S>& x, const BSpline<S>& spline) {
    const Shape& sx = x.shape();
    if (sx.size() != 4) throw Error("basis_expand expects rank-4");
    const int64_t N = sx[0], C = sx[1], HW = sx[2] * sx[3];
    const int64_t B = spline.num_basis();
    Tensor<S> out({N, C * B, sx[2], sx[3]});
    const S* px = x.val().data();
    S* po = out.data();
    kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
        const int64_t n = r / C, c = r % C;
        std::vector<S> vals(static_cast<size_t>(B));
        for (int64_t p = 0; p < HW; ++p) {
            spline.eval(px[r * HW + p], vals.data());
            for (int64_t j = 0; j < B; ++j) po[((n * C + c) * B + j) * HW + p] = vals[static_cast<size_t>(j)];
        }
    });
    auto nx = x.node();
    return make_op<S>({x}, std::move(out), [nx, spline, N, C, HW, B](const Node<S>& self) {
        if (!nx->requires_grad) return;
        Tensor<S> dx(nx->value.shape());
        const S* pg = self.grad.data();
        const S* px = nx->value.data();
        S* pd = dx.data();
        kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
            const int64_t n = r / C, c = r % C;
            std::vector<S> vals(static_cast<size_t>(B)), der(static_cast<size_t>(B));
            for (int64_t p = 0; p < HW; ++p) {
                spline.eval(px[r * HW + p], vals.data(), der.data());
                S acc = S(0);
                for (int64_t j = 0; j < B; ++j)
                    acc += pg[((n * C + c) * B + j) * HW + p] * der[static_cast<size_t>(j)];
                pd[r * HW + p] = acc;
            }
        });
        accum_grad(nx, dx);
    });
}

}  // namespace ad
}  // namespace ncast
