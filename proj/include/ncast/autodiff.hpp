#pragma once

// Define-by-run reverse-mode autodiff over Tensor<S>, plus a Dual wrapper for
// forward-mode directional derivatives (JVP). Tangents are composed from the
// same taped primitives as primal values, so reverse-mode gradients flow
// through forward-mode tangents (reverse-over-forward).

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ncast/kernels.hpp"
#include "ncast/tensor.hpp"

namespace ncast::ad {

inline bool& grad_enabled() {
    thread_local bool on = true;
    return on;
}

struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGrad() { grad_enabled() = prev; }
};

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward;  // reads self.grad/value, scatters into parents
};

inline uint64_t next_node_id() {
    static uint64_t counter = 0;
    return ++counter;
}

template <typename S>
void accum_grad(const std::shared_ptr<Node<S>>& n, const Tensor<S>& g) {
    if (!n || !n->requires_grad) return;
    check_same_shape(n->value, g, "grad accumulation");
    if (n->grad.empty()) n->grad = Tensor<S>(n->value.shape());
    S* dst = n->grad.data();
    const S* src = g.data();
    kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { dst[i] += src[i]; });
}

template <typename S>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}

    static Var leaf(Tensor<S> v, bool requires_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->value = std::move(v);
        n->requires_grad = requires_grad && grad_enabled();
        n->id = next_node_id();
        return Var(std::move(n));
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor<S>& val() const { return n_->value; }
    Tensor<S>& val_mut() { return n_->value; }
    const Shape& shape() const { return n_->value.shape(); }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    const std::shared_ptr<Node<S>>& node() const { return n_; }

    Tensor<S>& grad() {
        if (n_->grad.empty()) n_->grad = Tensor<S>(n_->value.shape());
        return n_->grad;
    }
    void zero_grad() {
        if (n_ && !n_->grad.empty()) n_->grad.fill(S(0));
    }

    // Reverse pass from this node. seed must match the value shape; by default
    // a ones tensor (scalar outputs use shape [1]).
    void backward(Tensor<S> seed = Tensor<S>()) const {
        if (!n_) throw Error("backward on undefined Var");
        if (seed.empty()) seed = Tensor<S>::full(n_->value.shape(), S(1));
        check_same_shape(n_->value, seed, "backward seed");
        std::vector<Node<S>*> order;
        std::unordered_set<const Node<S>*> seen;
        std::vector<Node<S>*> stack{n_.get()};
        seen.insert(n_.get());
        while (!stack.empty()) {
            Node<S>* cur = stack.back();
            stack.pop_back();
            order.push_back(cur);
            for (auto& p : cur->parents)
                if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
        std::sort(order.begin(), order.end(), [](const Node<S>* a, const Node<S>* b) { return a->id > b->id; });
        accum_grad(n_, seed);
        for (Node<S>* nd : order)
            if (nd->backward && !nd->grad.empty()) nd->backward(*nd);
    }

private:
    std::shared_ptr<Node<S>> n_;
};

// Create an op node. bw receives the finished node (value + accumulated grad)
// and scatters into parents; it is dropped entirely when no parent needs grad.
template <typename S, typename BW>
Var<S> make_op(std::vector<Var<S>> parents, Tensor<S> value, BW&& bw) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->id = next_node_id();
    bool need = false;
    if (grad_enabled())
        for (const auto& p : parents) need = need || p.requires_grad();
    if (need) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::forward<BW>(bw);
    }
    return Var<S>(std::move(n));
}

template <typename S>
Var<S> detach(const Var<S>& a) {
    return Var<S>::leaf(a.val(), false);
}

// ---------------------------------------------------------------- elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.val(), b.val(), "add");
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = pa[i] + pb[i]; });
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb](const Node<S>& self) {
        accum_grad(na, self.grad);
        accum_grad(nb, self.grad);
    });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.val(), b.val(), "sub");
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = pa[i] - pb[i]; });
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb](const Node<S>& self) {
        accum_grad(na, self.grad);
        if (nb && nb->requires_grad) {
            Tensor<S> g(self.grad.shape());
            const S* pg = self.grad.data();
            S* pd = g.data();
            kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = -pg[i]; });
            accum_grad(nb, g);
        }
    });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
    check_same_shape(a.val(), b.val(), "mul");
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = pa[i] * pb[i]; });
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb](const Node<S>& self) {
        const S* pg = self.grad.data();
        if (na && na->requires_grad) {
            Tensor<S> g(self.grad.shape());
            const S* pv = nb->value.data();
            S* pd = g.data();
            kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = pg[i] * pv[i]; });
            accum_grad(na, g);
        }
        if (nb && nb->requires_grad) {
            Tensor<S> g(self.grad.shape());
            const S* pv = na->value.data();
            S* pd = g.data();
            kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = pg[i] * pv[i]; });
            accum_grad(nb, g);
        }
    });
}

template <typename S>
Var<S> neg(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = -pa[i]; });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = -pg[i]; });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> scale(const Var<S>& a, S c) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = c * pa[i]; });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, c](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = c * pg[i]; });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> add_const(const Var<S>& a, S c) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = pa[i] + c; });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) { accum_grad(na, self.grad); });
}

// c - a
template <typename S>
Var<S> rsub_const(S c, const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = c - pa[i]; });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = -pg[i]; });
        accum_grad(na, g);
    });
}

// a + c*b
template <typename S>
Var<S> add_scaled(const Var<S>& a, const Var<S>& b, S c) {
    check_same_shape(a.val(), b.val(), "add_scaled");
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = pa[i] + c * pb[i]; });
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb, c](const Node<S>& self) {
        accum_grad(na, self.grad);
        if (nb && nb->requires_grad) {
            Tensor<S> g(self.grad.shape());
            const S* pg = self.grad.data();
            S* pd = g.data();
            kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = c * pg[i]; });
            accum_grad(nb, g);
        }
    });
}

// ------------------------------------------------------------------ nonlinear

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(),
                [&](int64_t i) { po[i] = S(1) / (S(1) + std::exp(-pa[i])); });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* py = self.value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(),
                    [&](int64_t i) { pd[i] = pg[i] * py[i] * (S(1) - py[i]); });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> tanh_op(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = std::tanh(pa[i]); });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* py = self.value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(),
                    [&](int64_t i) { pd[i] = pg[i] * (S(1) - py[i] * py[i]); });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> sin_op(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = std::sin(pa[i]); });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* px = na->value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = pg[i] * std::cos(px[i]); });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> cos_op(const Var<S>& a) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t i) { po[i] = std::cos(pa[i]); });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* px = na->value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(), [&](int64_t i) { pd[i] = -pg[i] * std::sin(px[i]); });
        accum_grad(na, g);
    });
}

// 1/sqrt(a + eps)
template <typename S>
Var<S> rsqrt_eps(const Var<S>& a, S eps) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(),
                [&](int64_t i) { po[i] = S(1) / std::sqrt(pa[i] + eps); });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* py = self.value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(),
                    [&](int64_t i) { pd[i] = S(-0.5) * pg[i] * py[i] * py[i] * py[i]; });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> silu(const Var<S>& a) {
    return mul(a, sigmoid(a));
}

template <typename S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
    Tensor<S> out(a.shape());
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(),
                [&](int64_t i) { po[i] = pa[i] >= S(0) ? pa[i] : slope * pa[i]; });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, slope](const Node<S>& self) {
        Tensor<S> g(self.grad.shape());
        const S* pg = self.grad.data();
        const S* px = na->value.data();
        S* pd = g.data();
        kern::for_n(g.numel(), kern::parallel_default(),
                    [&](int64_t i) { pd[i] = px[i] >= S(0) ? pg[i] : slope * pg[i]; });
        accum_grad(na, g);
    });
}

// ------------------------------------------------------------------ reductions

template <typename S>
Var<S> sum_all(const Var<S>& a) {
    Tensor<S> out({1});
    out[0] = static_cast<S>(kern::sum(a.val().data(), a.val().numel(), kern::parallel_default()));
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        if (!na->requires_grad) return;
        const S g = self.grad[0];
        Tensor<S> d(na->value.shape(), g);
        accum_grad(na, d);
    });
}

template <typename S>
Var<S> mean_all(const Var<S>& a) {
    const int64_t n = a.val().numel();
    Tensor<S> out({1});
    out[0] = static_cast<S>(kern::sum(a.val().data(), n, kern::parallel_default()) / static_cast<double>(n));
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, n](const Node<S>& self) {
        if (!na->requires_grad) return;
        const S g = self.grad[0] / static_cast<S>(n);
        Tensor<S> d(na->value.shape(), g);
        accum_grad(na, d);
    });
}

// rows of a [B, M] -> [B]
template <typename S>
Var<S> mean_rows(const Var<S>& a) {
    if (a.shape().size() != 2) throw Error("mean_rows expects rank-2");
    const int64_t B = a.shape()[0], M = a.shape()[1];
    Tensor<S> out({B});
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
        S acc = S(0);
        for (int64_t j = 0; j < M; ++j) acc += pa[i * M + j];
        po[i] = acc / static_cast<S>(M);
    });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, B, M](const Node<S>& self) {
        if (!na->requires_grad) return;
        Tensor<S> g({B, M});
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
            const S v = pg[i] / static_cast<S>(M);
            for (int64_t j = 0; j < M; ++j) pd[i * M + j] = v;
        });
        accum_grad(na, g);
    });
}

template <typename S>
Var<S> sum_rows(const Var<S>& a) {
    if (a.shape().size() != 2) throw Error("sum_rows expects rank-2");
    const int64_t B = a.shape()[0], M = a.shape()[1];
    Tensor<S> out({B});
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
        S acc = S(0);
        for (int64_t j = 0; j < M; ++j) acc += pa[i * M + j];
        po[i] = acc;
    });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, B, M](const Node<S>& self) {
        if (!na->requires_grad) return;
        Tensor<S> g({B, M});
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
            for (int64_t j = 0; j < M; ++j) pd[i * M + j] = pg[i];
        });
        accum_grad(na, g);
    });
}

// a [B] -> [B, M]
template <typename S>
Var<S> broadcast_rows(const Var<S>& a, int64_t M) {
    if (a.shape().size() != 1) throw Error("broadcast_rows expects rank-1");
    const int64_t B = a.shape()[0];
    Tensor<S> out({B, M});
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
        for (int64_t j = 0; j < M; ++j) po[i * M + j] = pa[i];
    });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, B, M](const Node<S>& self) {
        if (!na->requires_grad) return;
        Tensor<S> g({B});
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
            S acc = S(0);
            for (int64_t j = 0; j < M; ++j) acc += pg[i * M + j];
            pd[i] = acc;
        });
        accum_grad(na, g);
    });
}

// y[i,j] = a[i,j] * s[i]
template <typename S>
Var<S> mul_rows(const Var<S>& a, const Var<S>& s) {
    if (a.shape().size() != 2 || s.shape().size() != 1 || a.shape()[0] != s.shape()[0])
        throw Error("mul_rows shape mismatch");
    const int64_t B = a.shape()[0], M = a.shape()[1];
    Tensor<S> out({B, M});
    const S* pa = a.val().data();
    const S* ps = s.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
        for (int64_t j = 0; j < M; ++j) po[i * M + j] = pa[i * M + j] * ps[i];
    });
    auto na = a.node(), ns = s.node();
    return make_op<S>({a, s}, std::move(out), [na, ns, B, M](const Node<S>& self) {
        const S* pg = self.grad.data();
        if (na && na->requires_grad) {
            Tensor<S> g({B, M});
            const S* ps = ns->value.data();
            S* pd = g.data();
            kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
                for (int64_t j = 0; j < M; ++j) pd[i * M + j] = pg[i * M + j] * ps[i];
            });
            accum_grad(na, g);
        }
        if (ns && ns->requires_grad) {
            Tensor<S> g({B});
            const S* pa = na->value.data();
            S* pd = g.data();
            kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
                S acc = S(0);
                for (int64_t j = 0; j < M; ++j) acc += pg[i * M + j] * pa[i * M + j];
                pd[i] = acc;
            });
            accum_grad(ns, g);
        }
    });
}

// -------------------------------------------------------------- shape plumbing

template <typename S>
Var<S> reshape(const Var<S>& a, Shape shape) {
    Tensor<S> out = a.val().reshaped(shape);
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na](const Node<S>& self) {
        if (!na->requires_grad) return;
        accum_grad(na, self.grad.reshaped(na->value.shape()));
    });
}

inline std::vector<int> inverse_axes(const std::vector<int>& axes) {
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[static_cast<size_t>(axes[i])] = static_cast<int>(i);
    return inv;
}

template <typename S>
Tensor<S> permute_tensor(const Tensor<S>& x, const std::vector<int>& axes) {
    const size_t r = x.rank();
    if (axes.size() != r) throw Error("permute: axes rank mismatch");
    Shape oshape(r);
    for (size_t i = 0; i < r; ++i) oshape[i] = x.shape()[static_cast<size_t>(axes[i])];
    Tensor<S> out(oshape);
    std::vector<int64_t> istr(r, 1), ostr(r, 1);
    for (int i = static_cast<int>(r) - 2; i >= 0; --i) {
        istr[i] = istr[i + 1] * x.shape()[i + 1];
        ostr[i] = ostr[i + 1] * oshape[i + 1];
    }
    // stride of output axis i in input index space
    std::vector<int64_t> map(r);
    for (size_t i = 0; i < r; ++i) map[i] = istr[static_cast<size_t>(axes[i])];
    const S* px = x.data();
    S* po = out.data();
    kern::for_n(out.numel(), kern::parallel_default(), [&](int64_t o) {
        int64_t rem = o, ii = 0;
        for (size_t i = 0; i < r; ++i) {
            ii += (rem / ostr[i]) * map[i];
            rem %= ostr[i];
        }
        po[o] = px[ii];
    });
    return out;
}

template <typename S>
Var<S> permute(const Var<S>& a, std::vector<int> axes) {
    Tensor<S> out = permute_tensor(a.val(), axes);
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, axes](const Node<S>& self) {
        if (!na->requires_grad) return;
        accum_grad(na, permute_tensor(self.grad, inverse_axes(axes)));
    });
}

// Concatenate along axis 1 (rank >= 2).
template <typename S>
Var<S> concat_axis1(const Var<S>& a, const Var<S>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sa.size() != sb.size()) throw Error("concat_axis1 rank mismatch");
    for (size_t i = 0; i < sa.size(); ++i)
        if (i != 1 && sa[i] != sb[i]) throw Error("concat_axis1 dim mismatch");
    int64_t inner = 1;
    for (size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
    const int64_t B = sa[0], Ca = sa[1], Cb = sb[1];
    Shape os = sa;
    os[1] = Ca + Cb;
    Tensor<S> out(os);
    const S* pa = a.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t n) {
        std::copy(pa + n * Ca * inner, pa + (n + 1) * Ca * inner, po + n * (Ca + Cb) * inner);
        std::copy(pb + n * Cb * inner, pb + (n + 1) * Cb * inner, po + (n * (Ca + Cb) + Ca) * inner);
    });
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb, B, Ca, Cb, inner](const Node<S>& self) {
        const S* pg = self.grad.data();
        if (na && na->requires_grad) {
            Tensor<S> g(na->value.shape());
            S* pd = g.data();
            kern::for_n(B, kern::parallel_default(), [&](int64_t n) {
                std::copy(pg + n * (Ca + Cb) * inner, pg + (n * (Ca + Cb) + Ca) * inner, pd + n * Ca * inner);
            });
            accum_grad(na, g);
        }
        if (nb && nb->requires_grad) {
            Tensor<S> g(nb->value.shape());
            S* pd = g.data();
            kern::for_n(B, kern::parallel_default(), [&](int64_t n) {
                std::copy(pg + (n * (Ca + Cb) + Ca) * inner, pg + (n + 1) * (Ca + Cb) * inner,
                          pd + n * Cb * inner);
            });
            accum_grad(nb, g);
        }
    });
}

// Slice channels [c0, c1) along axis 1 (rank >= 2).
template <typename S>
Var<S> slice_axis1(const Var<S>& a, int64_t c0, int64_t c1) {
    const Shape& sa = a.shape();
    if (sa.size() < 2 || c0 < 0 || c1 > sa[1] || c0 >= c1) throw Error("slice_axis1 bounds");
    int64_t inner = 1;
    for (size_t i = 2; i < sa.size(); ++i) inner *= sa[i];
    const int64_t B = sa[0], C = sa[1], Cs = c1 - c0;
    Shape os = sa;
    os[1] = Cs;
    Tensor<S> out(os);
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t n) {
        std::copy(pa + (n * C + c0) * inner, pa + (n * C + c1) * inner, po + n * Cs * inner);
    });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, B, C, c0, Cs, inner](const Node<S>& self) {
        if (!na->requires_grad) return;
        Tensor<S> g(na->value.shape());
        const S* pg = self.grad.data();
        S* pd = g.data();
        kern::for_n(B, kern::parallel_default(), [&](int64_t n) {
            std::copy(pg + n * Cs * inner, pg + (n + 1) * Cs * inner, pd + (n * C + c0) * inner);
        });
        accum_grad(na, g);
    });
}

// ------------------------------------------------------------- channel algebra

// x [N,C,...] * g[C] broadcast over leading/inner dims
template <typename S>
Var<S> mul_channels(const Var<S>& x, const Var<S>& g) {
    const Shape& sx = x.shape();
    if (sx.size() < 2 || g.shape().size() != 1 || g.shape()[0] != sx[1]) throw Error("mul_channels shapes");
    int64_t inner = 1;
    for (size_t i = 2; i < sx.size(); ++i) inner *= sx[i];
    const int64_t N = sx[0], C = sx[1];
    Tensor<S> out(sx);
    const S* px = x.val().data();
    const S* pgm = g.val().data();
    S* po = out.data();
    kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
        const S gv = pgm[r % C];
        for (int64_t i = 0; i < inner; ++i) po[r * inner + i] = px[r * inner + i] * gv;
    });
    auto nx = x.node(), ng = g.node();
    return make_op<S>({x, g}, std::move(out), [nx, ng, N, C, inner](const Node<S>& self) {
        const S* pg = self.grad.data();
        if (nx && nx->requires_grad) {
            Tensor<S> d(nx->value.shape());
            const S* pgm = ng->value.data();
            S* pd = d.data();
            kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
                const S gv = pgm[r % C];
                for (int64_t i = 0; i < inner; ++i) pd[r * inner + i] = pg[r * inner + i] * gv;
            });
            accum_grad(nx, d);
        }
        if (ng && ng->requires_grad) {
            Tensor<S> d({C});
            const S* px = nx->value.data();
            S* pd = d.data();
            kern::for_n(C, kern::parallel_default(), [&](int64_t c) {
                S acc = S(0);
                for (int64_t n = 0; n < N; ++n) {
                    const int64_t base = (n * C + c) * inner;
                    for (int64_t i = 0; i < inner; ++i) acc += pg[base + i] * px[base + i];
                }
                pd[c] = acc;
            });
            accum_grad(ng, d);
        }
    });
}

template <typename S>
Var<S> add_channels(const Var<S>& x, const Var<S>& b) {
    const Shape& sx = x.shape();
    if (sx.size() < 2 || b.shape().size() != 1 || b.shape()[0] != sx[1]) throw Error("add_channels shapes");
    int64_t inner = 1;
    for (size_t i = 2; i < sx.size(); ++i) inner *= sx[i];
    const int64_t N = sx[0], C = sx[1];
    Tensor<S> out(sx);
    const S* px = x.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
        const S bv = pb[r % C];
        for (int64_t i = 0; i < inner; ++i) po[r * inner + i] = px[r * inner + i] + bv;
    });
    auto nx = x.node(), nb = b.node();
    return make_op<S>({x, b}, std::move(out), [nx, nb, N, C, inner](const Node<S>& self) {
        accum_grad(nx, self.grad);
        if (nb && nb->requires_grad) {
            Tensor<S> d({C});
            const S* pg = self.grad.data();
            S* pd = d.data();
            kern::for_n(C, kern::parallel_default(), [&](int64_t c) {
                S acc = S(0);
                for (int64_t n = 0; n < N; ++n) {
                    const int64_t base = (n * C + c) * inner;
                    for (int64_t i = 0; i < inner; ++i) acc += pg[base + i];
                }
                pd[c] = acc;
            });
            accum_grad(nb, d);
        }
    });
}

// x [N,C,...] + e[N,C] broadcast over inner dims (per-sample channel bias)
template <typename S>
Var<S> add_sample_channel(const Var<S>& x, const Var<S>& e) {
    const Shape& sx = x.shape();
    if (sx.size() < 2 || e.shape().size() != 2 || e.shape()[0] != sx[0] || e.shape()[1] != sx[1])
        throw Error("add_sample_channel shapes");
    int64_t inner = 1;
    for (size_t i = 2; i < sx.size(); ++i) inner *= sx[i];
    const int64_t NC = sx[0] * sx[1];
    Tensor<S> out(sx);
    const S* px = x.val().data();
    const S* pe = e.val().data();
    S* po = out.data();
    kern::for_n(NC, kern::parallel_default(), [&](int64_t r) {
        const S bv = pe[r];
        for (int64_t i = 0; i < inner; ++i) po[r * inner + i] = px[r * inner + i] + bv;
    });
    auto nx = x.node(), ne = e.node();
    return make_op<S>({x, e}, std::move(out), [nx, ne, NC, inner](const Node<S>& self) {
        accum_grad(nx, self.grad);
        if (ne && ne->requires_grad) {
            Tensor<S> d(ne->value.shape());
            const S* pg = self.grad.data();
            S* pd = d.data();
            kern::for_n(NC, kern::parallel_default(), [&](int64_t r) {
                S acc = S(0);
                for (int64_t i = 0; i < inner; ++i) acc += pg[r * inner + i];
                pd[r] = acc;
            });
            accum_grad(ne, d);
        }
    });
}

// ----------------------------------------------------------------- linear alg

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw Error("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<S> out({m, n});
    kern::gemm(false, false, m, n, k, S(1), a.val().data(), b.val().data(), S(0), out.data(),
               kern::parallel_default());
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb, m, k, n](const Node<S>& self) {
        const bool par = kern::parallel_default();
        if (na && na->requires_grad) {
            Tensor<S> g({m, k});
            kern::gemm(false, true, m, k, n, S(1), self.grad.data(), nb->value.data(), S(0), g.data(), par);
            accum_grad(na, g);
        }
        if (nb && nb->requires_grad) {
            Tensor<S> g({k, n});
            kern::gemm(true, false, k, n, m, S(1), na->value.data(), self.grad.data(), S(0), g.data(), par);
            accum_grad(nb, g);
        }
    });
}

// y[B,M] = x[B,M] + b[M]
template <typename S>
Var<S> add_rowvec(const Var<S>& x, const Var<S>& b) {
    if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
        throw Error("add_rowvec shapes");
    const int64_t B = x.shape()[0], M = x.shape()[1];
    Tensor<S> out({B, M});
    const S* px = x.val().data();
    const S* pb = b.val().data();
    S* po = out.data();
    kern::for_n(B, kern::parallel_default(), [&](int64_t i) {
        for (int64_t j = 0; j < M; ++j) po[i * M + j] = px[i * M + j] + pb[j];
    });
    auto nx = x.node(), nb = b.node();
    return make_op<S>({x, b}, std::move(out), [nx, nb, B, M](const Node<S>& self) {
        accum_grad(nx, self.grad);
        if (nb && nb->requires_grad) {
            Tensor<S> d({M});
            const S* pg = self.grad.data();
            S* pd = d.data();
            kern::for_n(M, kern::parallel_default(), [&](int64_t j) {
                S acc = S(0);
                for (int64_t i = 0; i < B; ++i) acc += pg[i * M + j];
                pd[j] = acc;
            });
            accum_grad(nb, d);
        }
    });
}

// Batched matmul a[B,m,k] x b[B,k,n] (or b[B,n,k] with trans_b) -> [B,m,n]
template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b, bool trans_b = false) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0]) throw Error("bmm rank");
    const int64_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
    const int64_t n = trans_b ? b.shape()[1] : b.shape()[2];
    if ((trans_b ? b.shape()[2] : b.shape()[1]) != k) throw Error("bmm inner dim");
    Tensor<S> out({B, m, n});
    const bool par = kern::parallel_default();
    for (int64_t i = 0; i < B; ++i)
        kern::gemm(false, trans_b, m, n, k, S(1), a.val().data() + i * m * k, b.val().data() + i * (trans_b ? n * k : k * n),
                   S(0), out.data() + i * m * n, par);
    auto na = a.node(), nb = b.node();
    return make_op<S>({a, b}, std::move(out), [na, nb, B, m, k, n, trans_b](const Node<S>& self) {
        const bool par = kern::parallel_default();
        const S* pg = self.grad.data();
        if (na && na->requires_grad) {
            Tensor<S> g(na->value.shape());
            for (int64_t i = 0; i < B; ++i) {
                // da = dy * op(b)^T
                if (!trans_b)
                    kern::gemm(false, true, m, k, n, S(1), pg + i * m * n, nb->value.data() + i * k * n, S(0),
                               g.data() + i * m * k, par);
                else
                    kern::gemm(false, false, m, k, n, S(1), pg + i * m * n, nb->value.data() + i * n * k, S(0),
                               g.data() + i * m * k, par);
            }
            accum_grad(na, g);
        }
        if (nb && nb->requires_grad) {
            Tensor<S> g(nb->value.shape());
            for (int64_t i = 0; i < B; ++i) {
                if (!trans_b)  // db = a^T * dy  [k,n]
                    kern::gemm(true, false, k, n, m, S(1), na->value.data() + i * m * k, pg + i * m * n, S(0),
                               g.data() + i * k * n, par);
                else  // db = dy^T * a  [n,k]
                    kern::gemm(true, false, n, k, m, S(1), pg + i * m * n, na->value.data() + i * m * k, S(0),
                               g.data() + i * n * k, par);
            }
            accum_grad(nb, g);
        }
    });
}

// Softmax over the last axis of a rank-2 view [R, M].
template <typename S>
Var<S> softmax_rows(const Var<S>& a) {
    if (a.shape().size() != 2) throw Error("softmax_rows expects rank-2");
    const int64_t R = a.shape()[0], M = a.shape()[1];
    Tensor<S> out({R, M});
    const S* pa = a.val().data();
    S* po = out.data();
    kern::for_n(R, kern::parallel_default(), [&](int64_t i) {
        const S* row = pa + i * M;
        S mx = row[0];
        for (int64_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        for (int64_t j = 0; j < M; ++j) {
            const S e = std::exp(row[j] - mx);
            po[i * M + j] = e;
            denom += e;
        }
        const S inv = S(1) / denom;
        for (int64_t j = 0; j < M; ++j) po[i * M + j] *= inv;
    });
    auto na = a.node();
    return make_op<S>({a}, std::move(out), [na, R, M](const Node<S>& self) {
        if (!na->requires_grad) return;
        Tensor<S> g({R, M});
        const S* pg = self.grad.data();
        const S* py = self.value.data();
        S* pd = g.data();
        kern::for_n(R, kern::parallel_default(), [&](int64_t i) {
            S dot = S(0);
            for (int64_t j = 0; j < M; ++j) dot += pg[i * M + j] * py[i * M + j];
            for (int64_t j = 0; j < M; ++j) pd[i * M + j] = py[i * M + j] * (pg[i * M + j] - dot);
        });
        accum_grad(na, g);
    });
}

// t[N] x freqs[F] -> [N,F], y[i,j] = t[i] * freqs[j] (freqs are constants)
template <typename S>
Var<S> outer_const(const Var<S>& t, std::vector<S> freqs) {
    if (t.shape().size() != 1) throw Error("outer_const expects rank-1");
    const int64_t N = t.shape()[0], F = static_cast<int64_t>(freqs.size());
    Tensor<S> out({N, F});
    const S* pt = t.val().data();
    S* po = out.data();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < F; ++j) po[i * F + j] = pt[i] * freqs[static_cast<size_t>(j)];
    auto nt = t.node();
    return make_op<S>({t}, std::move(out), [nt, N, F, freqs](const Node<S>& self) {
        if (!nt->requires_grad) return;
        Tensor<S> g({N});
        const S* pg = self.grad.data();
        for (int64_t i = 0; i < N; ++i) {
            S acc = S(0);
            for (int64_t j = 0; j < F; ++j) acc += pg[i * F + j] * freqs[static_cast<size_t>(j)];
            g[i] = acc;
        }
        accum_grad(nt, g);
    });
}

}  // namespace ncast::ad
