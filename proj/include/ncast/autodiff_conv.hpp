#pragma once

// Convolution-family ops for the autodiff tape. im2col buffers are recomputed
// in the backward pass rather than cached, trading a little time for a flat
// memory profile.

#include "ncast/autodiff.hpp"

namespace ncast::ad {

// x[N,Ci,H,W] * w[Co,Ci,kh,kw] (+ b[Co]) -> y[N,Co,Ho,Wo]
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride, int64_t pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[1]) throw Error("conv2d shapes");
    const int64_t N = sx[0], Ci = sx[1], H = sx[2], W = sx[3];
    const int64_t Co = sw[0], kh = sw[2], kw = sw[3];
    const int64_t ho = kern::conv_out_dim(H, kh, stride, pad);
    const int64_t wo = kern::conv_out_dim(W, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw Error("conv2d: empty output");
    const int64_t K = Ci * kh * kw, P = ho * wo;
    const bool par = kern::parallel_default();
    Tensor<S> out({N, Co, ho, wo});
    Tensor<S> col({K, P});
    for (int64_t n = 0; n < N; ++n) {
        kern::im2col(x.val().data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, col.data(), par);
        kern::gemm(false, false, Co, P, K, S(1), w.val().data(), col.data(), S(0), out.data() + n * Co * P, par);
        if (b.defined()) {
            S* py = out.data() + n * Co * P;
            kern::for_n(Co, par, [&](int64_t c) {
                const S bv = b.val()[c];
                for (int64_t p = 0; p < P; ++p) py[c * P + p] += bv;
            });
        }
    }
    auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
    std::vector<Var<S>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op<S>(std::move(parents), std::move(out),
                      [nx, nw, nb, N, Ci, H, W, Co, kh, kw, stride, pad, K, P, ho, wo](const Node<S>& self) {
                          const bool par = kern::parallel_default();
                          const S* pg = self.grad.data();
                          Tensor<S> col({K, P});
                          if (nw->requires_grad || (nx && nx->requires_grad)) {
                              Tensor<S> dw({Co, K});
                              Tensor<S> dx;
                              if (nx->requires_grad) dx = Tensor<S>({N, Ci, H, W});
                              Tensor<S> dcol({K, P});
                              for (int64_t n = 0; n < N; ++n) {
                                  if (nw->requires_grad) {
                                      kern::im2col(nx->value.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride,
                                                   pad, col.data(), par);
                                      kern::gemm(false, true, Co, K, P, S(1), pg + n * Co * P, col.data(), S(1),
                                                 dw.data(), par);
                                  }
                                  if (nx->requires_grad) {
                                      kern::gemm(true, false, K, P, Co, S(1), nw->value.data(), pg + n * Co * P,
                                                 S(0), dcol.data(), par);
                                      kern::col2im(dcol.data(), Ci, H, W, kh, kw, stride, pad,
                                                   dx.data() + n * Ci * H * W, par);
                                  }
                              }
                              if (nw->requires_grad) accum_grad(nw, dw.reshaped(nw->value.shape()));
                              if (nx->requires_grad) accum_grad(nx, dx);
                          }
                          if (nb && nb->requires_grad) {
                              Tensor<S> db({Co});
                              kern::for_n(Co, par, [&](int64_t c) {
                                  S acc = S(0);
                                  for (int64_t n = 0; n < N; ++n) {
                                      const S* row = pg + (n * Co + c) * P;
                                      for (int64_t p = 0; p < P; ++p) acc += row[p];
                                  }
                                  db[c] = acc;
                              });
                              accum_grad(nb, db);
                          }
                      });
}

// Transposed conv: x[N,Ci,H,W] * w[Ci,Co,kh,kw] (+ b[Co]) -> y[N,Co,Ho,Wo],
// Ho = (H-1)*stride - 2*pad + kh. Exactly the adjoint of conv2d(stride,pad).
template <typename S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride, int64_t pad) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4 || sx[1] != sw[0]) throw Error("conv_transpose2d shapes");
    const int64_t N = sx[0], Ci = sx[1], H = sx[2], W = sx[3];
    const int64_t Co = sw[1], kh = sw[2], kw = sw[3];
    const int64_t Ho = (H - 1) * stride - 2 * pad + kh;
    const int64_t Wo = (W - 1) * stride - 2 * pad + kw;
    if (Ho <= 0 || Wo <= 0) throw Error("conv_transpose2d: empty output");
    if (kern::conv_out_dim(Ho, kh, stride, pad) != H || kern::conv_out_dim(Wo, kw, stride, pad) != W)
        throw Error("conv_transpose2d: inconsistent geometry");
    const int64_t K = Co * kh * kw, P = H * W;
    const bool par = kern::parallel_default();
    Tensor<S> out({N, Co, Ho, Wo});
    Tensor<S> col({K, P});
    for (int64_t n = 0; n < N; ++n) {
        // col = w^T[K,Ci] * x_n[Ci,P]
        kern::gemm(true, false, K, P, Ci, S(1), w.val().data(), x.val().data() + n * Ci * P, S(0), col.data(),
                   par);
        kern::col2im(col.data(), Co, Ho, Wo, kh, kw, stride, pad, out.data() + n * Co * Ho * Wo, par);
        if (b.defined()) {
            S* py = out.data() + n * Co * Ho * Wo;
            kern::for_n(Co, par, [&](int64_t c) {
                const S bv = b.val()[c];
                for (int64_t p = 0; p < Ho * Wo; ++p) py[c * Ho * Wo + p] += bv;
            });
        }
    }
    auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
    std::vector<Var<S>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    return make_op<S>(std::move(parents), std::move(out),
                      [nx, nw, nb, N, Ci, H, W, Co, kh, kw, stride, pad, K, P, Ho, Wo](const Node<S>& self) {
                          const bool par = kern::parallel_default();
                          const S* pg = self.grad.data();
                          Tensor<S> dcol({K, P});
                          const bool need_x = nx->requires_grad, need_w = nw->requires_grad;
                          Tensor<S> dx, dw;
                          if (need_x) dx = Tensor<S>({N, Ci, H, W});
                          if (need_w) dw = Tensor<S>({Ci, K});
                          for (int64_t n = 0; n < N && (need_x || need_w); ++n) {
                              kern::im2col(pg + n * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride, pad, dcol.data(),
                                           par);
                              if (need_x)
                                  kern::gemm(false, false, Ci, P, K, S(1), nw->value.data(), dcol.data(), S(0),
                                             dx.data() + n * Ci * P, par);
                              if (need_w)
                                  kern::gemm(false, true, Ci, K, P, S(1), nx->value.data() + n * Ci * P,
                                             dcol.data(), S(1), dw.data(), par);
                          }
                          if (need_x) accum_grad(nx, dx);
                          if (need_w) accum_grad(nw, dw.reshaped(nw->value.shape()));
                          if (nb && nb->requires_grad) {
                              Tensor<S> db({Co});
                              kern::for_n(Co, par, [&](int64_t c) {
                                  S acc = S(0);
                                  for (int64_t n = 0; n < N; ++n) {
                                      const S* row = pg + (n * Co + c) * Ho * Wo;
                                      for (int64_t p = 0; p < Ho * Wo; ++p) acc += row[p];
                                  }
                                  db[c] = acc;
                              });
                              accum_grad(nb, db);
                          }
                      });
}

// Depthwise temporal convolution across channel groups. Channels of
// x[N, G*F, H, W] are interpreted as (slot, feature) = (c / F, c % F); each
// feature f has its own kernel k[f, :] applied along the slot axis with zero
// padding. The same kernel is shared by every slot (plain convolution).
template <typename S>
Var<S> temporal_conv(const Var<S>& x, const Var<S>& k, int64_t groups) {
    const Shape& sx = x.shape();
    const Shape& sk = k.shape();
    if (sx.size() != 4 || sk.size() != 2) throw Error("temporal_conv shapes");
    const int64_t N = sx[0], C = sx[1], HW = sx[2] * sx[3];
    if (C % groups) throw Error("temporal_conv: channels not divisible by groups");
    const int64_t F = C / groups, Kt = sk[1];
    if (sk[0] != F || Kt % 2 == 0) throw Error("temporal_conv: kernel must be [features, odd]");
    const int64_t ctr = Kt / 2;
    Tensor<S> out(sx);
    const S* px = x.val().data();
    const S* pk = k.val().data();
    S* po = out.data();
    kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
        const int64_t n = r / C, c = r % C, tau = c / F, f = c % F;
        S* orow = po + r * HW;
        for (int64_t p = 0; p < HW; ++p) orow[p] = S(0);
        for (int64_t j = 0; j < Kt; ++j) {
            const int64_t ts = tau + j - ctr;
            if (ts < 0 || ts >= groups) continue;
            const S kv = pk[f * Kt + j];
            if (kv == S(0)) continue;
            const S* xrow = px + (n * C + ts * F + f) * HW;
            for (int64_t p = 0; p < HW; ++p) orow[p] += kv * xrow[p];
        }
    });
    auto nx = x.node(), nk = k.node();
    return make_op<S>({x, k}, std::move(out), [nx, nk, N, C, HW, F, Kt, ctr, groups](const Node<S>& self) {
        const S* pg = self.grad.data();
        if (nx && nx->requires_grad) {
            Tensor<S> dx(nx->value.shape());
            const S* pk = nk->value.data();
            S* pd = dx.data();
            kern::for_n(N * C, kern::parallel_default(), [&](int64_t r) {
                const int64_t n = r / C, c = r % C, tau = c / F, f = c % F;
                S* drow = pd + r * HW;
                for (int64_t p = 0; p < HW; ++p) drow[p] = S(0);
                for (int64_t j = 0; j < Kt; ++j) {
                    const int64_t to = tau - j + ctr;
                    if (to < 0 || to >= groups) continue;
                    const S kv = pk[f * Kt + j];
                    const S* grow = pg + (n * C + to * F + f) * HW;
                    for (int64_t p = 0; p < HW; ++p) drow[p] += kv * grow[p];
                }
            });
            accum_grad(nx, dx);
        }
        if (nk && nk->requires_grad) {
            Tensor<S> dk(nk->value.shape());
            const S* px = nx->value.data();
            S* pd = dk.data();
            kern::for_n(F, kern::parallel_default(), [&](int64_t f) {
                for (int64_t j = 0; j < Kt; ++j) {
                    S acc = S(0);
                    for (int64_t n = 0; n < N; ++n)
                        for (int64_t tau = 0; tau < groups; ++tau) {
                            const int64_t ts = tau + j - ctr;
                            if (ts < 0 || ts >= groups) continue;
                            const S* grow = pg + (n * C + tau * F + f) * HW;
                            const S* xrow = px + (n * C + ts * F + f) * HW;
                            for (int64_t p = 0; p < HW; ++p) acc += grow[p] * xrow[p];
                        }
                    pd[f * Kt + j] = acc;
                }
            });
            accum_grad(nk, dk);
        }
    });
}

}  // namespace ncast::ad
