#include <doctest.h>

#include "ncast/autodiff.hpp"
#include "ncast/autodiff_conv.hpp"
#include "ncast/bspline.hpp"
#include "ncast/dual.hpp"
#include "ncast/rng.hpp"
#include "testutil.hpp"

using namespace ncast;
using namespace ncast::ad;
using testutil::gradcheck;

namespace {

template <typename S>
Var<S> param(Rng& rng, Shape shape) {
    return Var<S>::leaf(rng.normal_tensor<S>(std::move(shape)), true);
}

}  // namespace

TEST_CASE("gradients of elementwise and reduction ops match finite differences") {
    Rng rng(21);
    auto a = param<double>(rng, {3, 4});
    auto b = param<double>(rng, {3, 4});

    std::vector<std::function<Var<double>()>> checks = {
        [&] { return sum_all(mul(add(a, b), sub(a, b))); },
        [&] { return mean_all(mul(a, sigmoid(b))); },
        [&] { return sum_all(tanh_op(mul(a, b))); },
        [&] { return sum_all(mul(sin_op(a), cos_op(b))); },
        [&] { return sum_all(rsqrt_eps(mul(a, a), 0.5)); },
        [&] { return sum_all(silu(a)); },
        [&] { return sum_all(leaky_relu(mul(a, b), 0.1)); },
        [&] { return mean_all(scale(add_scaled(a, b, -2.3), 1.7)); },
        [&] { return sum_all(add_const(rsub_const(0.3, a), 1.1)); },
        [&] { return sum_all(mul_rows(a, mean_rows(b))); },
        [&] { return sum_all(broadcast_rows(sum_rows(a), 5)); },
        [&] { return sum_all(mul(softmax_rows(a), a)); },
        [&] { return mean_all(mul(softmax_rows(a), b)); },
    };
    for (auto& f : checks) CHECK(gradcheck<double>(f, {a, b}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of shape and broadcast ops match finite differences") {
    Rng rng(22);
    auto x = param<double>(rng, {2, 3, 4, 5});
    auto g = param<double>(rng, {3});
    auto e = param<double>(rng, {2, 3});
    auto y = param<double>(rng, {2, 2, 4, 5});

    std::vector<std::function<Var<double>()>> checks = {
        [&] { return sum_all(mul(reshape(x, {6, 20}), reshape(x, {6, 20}))); },
        [&] { return sum_all(sin_op(permute(x, {0, 2, 1, 3}))); },
        [&] { return sum_all(mul(concat_axis1(x, y), concat_axis1(y, x))); },
        [&] { return sum_all(tanh_op(slice_axis1(x, 1, 3))); },
        [&] { return sum_all(mul_channels(x, g)); },
        [&] { return sum_all(sigmoid(add_channels(x, g))); },
        [&] { return sum_all(mul(add_sample_channel(x, e), x)); },
    };
    for (auto& f : checks) CHECK(gradcheck<double>(f, {x, g, e, y}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of linear algebra ops match finite differences") {
    Rng rng(23);
    auto a = param<double>(rng, {4, 3});
    auto b = param<double>(rng, {3, 5});
    auto v = param<double>(rng, {5});
    auto p = param<double>(rng, {2, 3, 4});
    auto q = param<double>(rng, {2, 4, 3});
    auto t = param<double>(rng, {4});

    std::vector<std::function<Var<double>()>> checks = {
        [&] { return sum_all(tanh_op(matmul(a, b))); },
        [&] { return sum_all(add_rowvec(matmul(a, b), v)); },
        [&] { return sum_all(sigmoid(bmm(p, q, false))); },
        [&] { return sum_all(bmm(p, p, true)); },
        [&] { return sum_all(sin_op(outer_const(t, {0.5, 2.0, 8.0}))); },
    };
    for (auto& f : checks) CHECK(gradcheck<double>(f, {a, b, v, p, q, t}, 1e-5) < 1e-7);
}

TEST_CASE("gradients of convolution ops match finite differences") {
    Rng rng(24);
    auto x = param<double>(rng, {2, 3, 6, 5});
    auto w = param<double>(rng, {4, 3, 3, 3});
    auto bias = param<double>(rng, {4});
    auto wt = param<double>(rng, {3, 2, 4, 4});
    auto bt = param<double>(rng, {2});
    auto kt = param<double>(rng, {2, 3});  // temporal kernel: 2 features, width 3

    std::vector<std::function<Var<double>()>> checks = {
        [&] { return sum_all(tanh_op(conv2d(x, w, bias, 1, 1))); },
        [&] { return sum_all(conv2d(x, w, Var<double>(), 2, 1)); },
        [&] { return sum_all(sigmoid(conv_transpose2d(x, wt, bt, 2, 1))); },
        [&] { return sum_all(mul(temporal_conv(x, kt, 3), x)); },  // 3 slots x 1... C=3 groups=3 F=1
    };
    // temporal_conv: C=3 channels, groups=3 -> F=1, kernel must be [1,3]
    auto kt1 = param<double>(rng, {1, 3});
    checks.back() = [&] { return sum_all(mul(temporal_conv(x, kt1, 3), x)); };
    for (auto& f : checks) CHECK(gradcheck<double>(f, {x, w, bias, wt, bt, kt1}, 1e-5) < 1e-6);
}

TEST_CASE("conv2d value matches a direct convolution") {
    Rng rng(25);
    const int64_t N = 2, Ci = 3, H = 7, W = 6, Co = 4, kh = 3, kw = 3, stride = 2, pad = 1;
    auto x = Var<double>::leaf(rng.normal_tensor<double>({N, Ci, H, W}));
    auto w = Var<double>::leaf(rng.normal_tensor<double>({Co, Ci, kh, kw}));
    auto b = Var<double>::leaf(rng.normal_tensor<double>({Co}));
    auto y = conv2d(x, w, b, stride, pad);
    const int64_t ho = kern::conv_out_dim(H, kh, stride, pad), wo = kern::conv_out_dim(W, kw, stride, pad);
    REQUIRE(y.shape() == Shape{N, Co, ho, wo});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t i = 0; i < ho; ++i)
                for (int64_t j = 0; j < wo; ++j) {
                    double acc = b.val()[co];
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t ki = 0; ki < kh; ++ki)
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                const int64_t yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                                if (yi >= 0 && yi < H && xj >= 0 && xj < W)
                                    acc += x.val().at({n, ci, yi, xj}) * w.val().at({co, ci, ki, kj});
                            }
                    CHECK(y.val().at({n, co, i, j}) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    Rng rng(26);
    const int64_t N = 1, Ci = 3, H = 8, W = 8, Co = 5, k = 4, stride = 2, pad = 1;
    auto w = rng.normal_tensor<double>({Co, Ci, k, k});
    auto x = Var<double>::leaf(rng.normal_tensor<double>({N, Ci, H, W}));
    auto y = conv2d(x, Var<double>::leaf(w), Var<double>(), stride, pad);
    // the transposed direction consumes the same [Co,Ci,k,k] buffer, read as
    // [in=Co, out=Ci, k, k]
    auto u = Var<double>::leaf(rng.normal_tensor<double>(y.shape()));
    auto ua = conv_transpose2d(u, Var<double>::leaf(w), Var<double>(), stride, pad);
    REQUIRE(ua.shape() == x.shape());
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < u.val().numel(); ++i) lhs += u.val()[i] * y.val()[i];
    for (int64_t i = 0; i < x.val().numel(); ++i) rhs += ua.val()[i] * x.val()[i];
    CHECK(testutil::rel_err(lhs, rhs) < 1e-12);
}

TEST_CASE("temporal_conv with a centered delta kernel is the identity") {
    Rng rng(27);
    const int64_t G = 4, F = 3;
    auto x = Var<double>::leaf(rng.normal_tensor<double>({2, G * F, 3, 3}));
    Tensor<double> k({F, 3});
    for (int64_t f = 0; f < F; ++f) k.at({f, 1}) = 1.0;
    auto y = temporal_conv(x, Var<double>::leaf(k), G);
    CHECK(bit_equal(y.val(), x.val()));
}

TEST_CASE("dual tangents match directional finite differences") {
    Rng rng(28);
    const double h = 1e-6;
    auto x0 = rng.normal_tensor<double>({2, 4});
    auto dx = rng.normal_tensor<double>({2, 4});

    auto run = [&](auto&& fn) {
        Dual<double> in{Var<double>::leaf(x0), Var<double>::leaf(dx)};
        Dual<double> out = fn(in);
        Tensor<double> xp(x0.shape()), xm(x0.shape());
        for (int64_t i = 0; i < x0.numel(); ++i) {
            xp[i] = x0[i] + h * dx[i];
            xm[i] = x0[i] - h * dx[i];
        }
        Dual<double> op = fn(Dual<double>{Var<double>::leaf(xp)});
        Dual<double> om = fn(Dual<double>{Var<double>::leaf(xm)});
        Tensor<double> fd(out.v.shape());
        for (int64_t i = 0; i < fd.numel(); ++i) fd[i] = (op.v.val()[i] - om.v.val()[i]) / (2 * h);
        REQUIRE(out.has_d());
        CHECK(testutil::rel_err_tensor(out.d.val(), fd, 1e-9) < 1e-7);
    };

    run([](const Dual<double>& a) { return dsilu(a); });
    run([](const Dual<double>& a) { return dtanh(a); });
    run([](const Dual<double>& a) { return dsigmoid(a); });
    run([](const Dual<double>& a) { return dsoftmax_rows(a); });
    run([](const Dual<double>& a) { return dmul(a, dtanh(a)); });
    run([](const Dual<double>& a) { return dsub(dscale(a, 2.0), dsilu(a)); });
    run([](const Dual<double>& a) { return dleaky_relu(a, 0.2); });
}

TEST_CASE("zero tangents stay structurally absent through dual helpers") {
    Rng rng(29);
    Dual<double> a{Var<double>::leaf(rng.normal_tensor<double>({3, 3}))};
    CHECK_FALSE(dsilu(a).has_d());
    CHECK_FALSE(dmul(a, dtanh(a)).has_d());
    Dual<double> b{Var<double>::leaf(rng.normal_tensor<double>({3, 3})),
                   Var<double>::leaf(rng.normal_tensor<double>({3, 3}))};
    CHECK(dadd(a, b).has_d());
    CHECK(dconcat_axis1(a, b).has_d());
    // the zero-filled half (a's channels) contributes exactly zero
    auto cc = dconcat_axis1(a, b);
    for (int64_t n = 0; n < 3; ++n)
        for (int64_t j = 0; j < 3; ++j) CHECK(cc.d.val().at({n, j}) == 0.0);
}

TEST_CASE("reverse-mode differentiates through forward-mode tangents") {
    Rng rng(30);
    auto w = param<double>(rng, {4, 4});
    auto x0 = rng.normal_tensor<double>({2, 4});
    auto dx = rng.normal_tensor<double>({2, 4});

    // L(w) = sum(tangent of tanh(x w) along dx); depends on w through the JVP
    auto f = [&] {
        Dual<double> in{Var<double>::leaf(x0), Var<double>::leaf(dx)};
        Dual<double> lin{matmul(in.v, w), matmul(in.d, w)};
        Dual<double> out = dtanh(lin);
        return sum_all(mul(out.d, out.d));
    };
    CHECK(gradcheck<double>(f, {w}, 1e-5) < 1e-7);
}

TEST_CASE("no-grad mode builds no graph and accumulates nothing") {
    Rng rng(31);
    auto w = param<double>(rng, {3, 3});
    {
        NoGrad guard;
        auto y = sum_all(mul(w, w));
        CHECK_FALSE(y.requires_grad());
        y.backward();
    }
    for (int64_t i = 0; i < 9; ++i) CHECK(w.grad()[i] == 0.0);
    auto y = sum_all(mul(w, w));
    CHECK(y.requires_grad());
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    auto w = Var<double>::leaf(Tensor<double>({2}, {1.0, 2.0}), true);
    auto run = [&] { return sum_all(mul(w, w)); };
    run().backward();
    run().backward();
    CHECK(w.grad()[0] == doctest::Approx(4.0));
    CHECK(w.grad()[1] == doctest::Approx(8.0));
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("basis_expand gradient matches finite differences") {
    Rng rng(32);
    BSpline<double> sp(3, 2, -1.0, 1.0);
    // keep x away from the grid edge so FD never crosses the clamp
    auto x = Var<double>::leaf(rng.uniform_tensor<double>({1, 2, 3, 3}, -0.9, 0.9), true);
    auto mixer = Var<double>::leaf(rng.normal_tensor<double>({1, 2 * sp.num_basis(), 3, 3}), false);
    auto f = [&] { return sum_all(mul(basis_expand(x, sp), mixer)); };
    CHECK(gradcheck<double>(f, {x}, 1e-6) < 1e-6);
}
