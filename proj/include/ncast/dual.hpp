#pragma once

// Forward-mode pairs (value, tangent) over autodiff Vars. An undefined
// tangent means exactly zero and is propagated structurally where possible.
// Because tangents are Vars on the same tape, reverse-mode differentiates
// through any forward-mode derivative built from these helpers.

#include "ncast/autodiff.hpp"

namespace ncast::ad {

template <typename S>
struct Dual {
    Var<S> v;
    Var<S> d;

    Dual() = default;
    explicit Dual(Var<S> value) : v(std::move(value)) {}
    Dual(Var<S> value, Var<S> tangent) : v(std::move(value)), d(std::move(tangent)) {}

    bool has_d() const { return d.defined(); }
    Var<S> d_or_zeros() const { return has_d() ? d : Var<S>::leaf(Tensor<S>(v.shape()), false); }
};

template <typename S>
Dual<S> dadd(const Dual<S>& a, const Dual<S>& b) {
    Dual<S> o(add(a.v, b.v));
    if (a.has_d() && b.has_d())
        o.d = add(a.d, b.d);
    else if (a.has_d())
        o.d = a.d;
    else if (b.has_d())
        o.d = b.d;
    return o;
}

template <typename S>
Dual<S> dsub(const Dual<S>& a, const Dual<S>& b) {
    Dual<S> o(sub(a.v, b.v));
    if (a.has_d() && b.has_d())
        o.d = sub(a.d, b.d);
    else if (a.has_d())
        o.d = a.d;
    else if (b.has_d())
        o.d = neg(b.d);
    return o;
}

template <typename S>
Dual<S> dmul(const Dual<S>& a, const Dual<S>& b) {
    Dual<S> o(mul(a.v, b.v));
    if (a.has_d() && b.has_d())
        o.d = add(mul(a.d, b.v), mul(a.v, b.d));
    else if (a.has_d())
        o.d = mul(a.d, b.v);
    else if (b.has_d())
        o.d = mul(a.v, b.d);
    return o;
}

template <typename S>
Dual<S> dscale(const Dual<S>& a, S c) {
    Dual<S> o(scale(a.v, c));
    if (a.has_d()) o.d = scale(a.d, c);
    return o;
}

template <typename S>
Dual<S> dsilu(const Dual<S>& a) {
    Var<S> s = sigmoid(a.v);
    Dual<S> o(mul(a.v, s));
    if (a.has_d()) {
        // d silu = sigma * (1 + x*(1 - sigma))
        Var<S> slope = mul(s, add_const(mul(a.v, rsub_const(S(1), s)), S(1)));
        o.d = mul(slope, a.d);
    }
    return o;
}

template <typename S>
Dual<S> dleaky_relu(const Dual<S>& a, S sl) {
    Dual<S> o(leaky_relu(a.v, sl));
    if (a.has_d()) {
        // reuse the primal's piecewise slope on the tangent
        Tensor<S> mask(a.v.shape());
        const Tensor<S>& xv = a.v.val();
        for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = xv[i] >= S(0) ? S(1) : sl;
        o.d = mul(a.d, Var<S>::leaf(std::move(mask), false));
    }
    return o;
}

template <typename S>
Dual<S> dtanh(const Dual<S>& a) {
    Var<S> y = tanh_op(a.v);
    Dual<S> o(y);
    if (a.has_d()) o.d = mul(a.d, rsub_const(S(1), mul(y, y)));
    return o;
}

template <typename S>
Dual<S> dsigmoid(const Dual<S>& a) {
    Var<S> s = sigmoid(a.v);
    Dual<S> o(s);
    if (a.has_d()) o.d = mul(a.d, mul(s, rsub_const(S(1), s)));
    return o;
}

template <typename S>
Dual<S> dreshape(const Dual<S>& a, Shape shape) {
    Dual<S> o(reshape(a.v, shape));
    if (a.has_d()) o.d = reshape(a.d, shape);
    return o;
}

template <typename S>
Dual<S> dpermute(const Dual<S>& a, const std::vector<int>& axes) {
    Dual<S> o(permute(a.v, axes));
    if (a.has_d()) o.d = permute(a.d, axes);
    return o;
}

template <typename S>
Dual<S> dconcat_axis1(const Dual<S>& a, const Dual<S>& b) {
    Dual<S> o(concat_axis1(a.v, b.v));
    if (a.has_d() || b.has_d()) o.d = concat_axis1(a.d_or_zeros(), b.d_or_zeros());
    return o;
}

template <typename S>
Dual<S> dslice_axis1(const Dual<S>& a, int64_t c0, int64_t c1) {
    Dual<S> o(slice_axis1(a.v, c0, c1));
    if (a.has_d()) o.d = slice_axis1(a.d, c0, c1);
    return o;
}

template <typename S>
Dual<S> dsoftmax_rows(const Dual<S>& a) {
    Var<S> y = softmax_rows(a.v);
    Dual<S> o(y);
    if (a.has_d()) {
        // dA = A .* (dS - rowsum(A .* dS))
        Var<S> ad = mul(y, a.d);
        Var<S> rs = sum_rows(ad);
        o.d = mul(y, sub(a.d, broadcast_rows(rs, a.v.shape()[1])));
    }
    return o;
}

}  // namespace ncast::ad
