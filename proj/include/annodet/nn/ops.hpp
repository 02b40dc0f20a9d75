/* Copyright 2026 The annodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "annodet/nn/autograd.hpp"

namespace annodet::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), Errc::kShape,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            T* cols) {
  const int HW = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * HW;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(row + oy * Wo, row + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            T* x) {
  const int HW = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * HW;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += row[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(n, p)) continue;
      auto& g = n.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (wants_grad(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (wants_grad(n, 1)) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    const auto& x = n.parents[0]->value;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v = sigmoid_scalar(v);
  return make_op<T>(out, {a}, [out](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * out[i] * (T(1) - out[i]);
  });
}

/// Sum of all entries, as a [1] tensor.
template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_op<T>(Tensor<T>({1}, s), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (auto& v : g.storage()) v += n.grad[0];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return make_op<T>(a.value().reshaped(std::move(shape)), {a}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

/// out[n,c,h,w] = m[n,0,h,w] * x[n,c,h,w]
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& m, const Var<T>& x) {
  const Shape& ms = m.shape();
  const Shape& xs = x.shape();
  require(ms.size() == 4 && xs.size() == 4 && ms[0] == xs[0] && ms[1] == 1 &&
              ms[2] == xs[2] && ms[3] == xs[3],
          Errc::kShape, "mask " + shape_str(ms) + " does not broadcast over " + shape_str(xs));
  const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> out = x.value();
  for (int b = 0; b < N; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < HW; ++i) out[(b * C + c) * HW + i] *= m.value()[b * HW + i];
  return make_op<T>(std::move(out), {m, x}, [N, C, HW](Node<T>& n) {
    const auto& mv = n.parents[0]->value;
    const auto& xv = n.parents[1]->value;
    if (wants_grad(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i) {
            const std::size_t k = (b * C + c) * HW + i;
            g[b * HW + i] += n.grad[k] * xv[k];
          }
    }
    if (wants_grad(n, 1)) {
      auto& g = n.parents[1]->grad_buffer();
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < HW; ++i) {
            const std::size_t k = (b * C + c) * HW + i;
            g[k] += n.grad[k] * mv[b * HW + i];
          }
    }
  });
}

/// 2-d convolution. x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] (may be invalid).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4 && ws.size() == 4 && ws[2] == ws[3], Errc::kShape,
          "conv2d expects NCHW input and square kernels");
  require(xs[1] == ws[1], Errc::kShape,
          "conv2d channel mismatch: input " + shape_str(xs) + " weight " + shape_str(ws));
  const int N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[0], k = ws[2];
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, Errc::kShape, "conv2d output would be empty");
  const bool has_bias = b.valid();
  if (has_bias)
    require(b.value().size() == static_cast<std::size_t>(Cout), Errc::kShape,
            "conv2d bias size mismatch");
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  const int K = Cin * k * k, HWo = Ho * Wo;

  Tensor<T> out({N, Cout, Ho, Wo});
  AlignedVector<T> cols(direct ? 0 : static_cast<std::size_t>(K) * HWo);
  CMapMat<T> wm(w.value().data(), Cout, K);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.value().data() + static_cast<std::size_t>(n) * Cin * H * W;
    const T* colp = xn;
    if (!direct) {
      detail::im2col(xn, Cin, H, W, k, stride, pad, Ho, Wo, cols.data());
      colp = cols.data();
    }
    MapMat<T> om(out.data() + static_cast<std::size_t>(n) * Cout * HWo, Cout, HWo);
    om.noalias() = wm * CMapMat<T>(colp, K, HWo);
    if (has_bias) {
      for (int c = 0; c < Cout; ++c) om.row(c).array() += b.value()[c];
    }
  }

  std::vector<Var<T>> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_op<T>(std::move(out), parents, [=](Node<T>& nd) {
    const auto& xv = nd.parents[0]->value;
    const auto& wv = nd.parents[1]->value;
    const bool gx = wants_grad(nd, 0), gw = wants_grad(nd, 1);
    const bool gb = has_bias && wants_grad(nd, 2);
    AlignedVector<T> col(direct ? 0 : static_cast<std::size_t>(K) * HWo);
    AlignedVector<T> dcol(static_cast<std::size_t>(K) * HWo);
    CMapMat<T> wm2(wv.data(), Cout, K);
    for (int n = 0; n < N; ++n) {
      CMapMat<T> dy(nd.grad.data() + static_cast<std::size_t>(n) * Cout * HWo, Cout, HWo);
      const T* xn = xv.data() + static_cast<std::size_t>(n) * Cin * H * W;
      if (gw) {
        const T* colp = xn;
        if (!direct) {
          detail::im2col(xn, Cin, H, W, k, stride, pad, Ho, Wo, col.data());
          colp = col.data();
        }
        MapMat<T> dw(nd.parents[1]->grad_buffer().data(), Cout, K);
        dw.noalias() += dy * CMapMat<T>(colp, K, HWo).transpose();
      }
      if (gb) {
        auto& db = nd.parents[2]->grad_buffer();
        for (int c = 0; c < Cout; ++c) db[c] += dy.row(c).sum();
      }
      if (gx) {
        T* dxn = nd.parents[0]->grad_buffer().data() + static_cast<std::size_t>(n) * Cin * H * W;
        if (direct) {
          MapMat<T> dx(dxn, K, HWo);
          dx.noalias() += wm2.transpose() * dy;
        } else {
          MapMat<T> dc(dcol.data(), K, HWo);
          dc.noalias() = wm2.transpose() * dy;
          detail::col2im(dcol.data(), Cin, H, W, k, stride, pad, Ho, Wo, dxn);
        }
      }
    }
  });
}

/// Fully connected layer. x: [N,F], w: [O,F], b: [O].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1], Errc::kShape,
          "linear: input " + shape_str(xs) + " weight " + shape_str(ws));
  const int N = xs[0], F = xs[1], O = ws[0];
  Tensor<T> out({N, O});
  MapMat<T> om(out.data(), N, O);
  om.noalias() = CMapMat<T>(x.value().data(), N, F) * CMapMat<T>(w.value().data(), O, F).transpose();
  for (int i = 0; i < N; ++i)
    for (int o = 0; o < O; ++o) out[i * O + o] += b.value()[o];
  return make_op<T>(std::move(out), {x, w, b}, [N, F, O](Node<T>& nd) {
    CMapMat<T> dy(nd.grad.data(), N, O);
    if (wants_grad(nd, 0)) {
      MapMat<T> dx(nd.parents[0]->grad_buffer().data(), N, F);
      dx.noalias() += dy * CMapMat<T>(nd.parents[1]->value.data(), O, F);
    }
    if (wants_grad(nd, 1)) {
      MapMat<T> dw(nd.parents[1]->grad_buffer().data(), O, F);
      dw.noalias() += dy.transpose() * CMapMat<T>(nd.parents[0]->value.data(), N, F);
    }
    if (wants_grad(nd, 2)) {
      auto& db = nd.parents[2]->grad_buffer();
      for (int i = 0; i < N; ++i)
        for (int o = 0; o < O; ++o) db[o] += nd.grad[i * O + o];
    }
  });
}

/// Nearest-neighbour resize of [N,C,H,W] to [N,C,Ht,Wt].
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int Ht, int Wt) {
  const Shape& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  std::vector<int> ys(Ht), xsrc(Wt);
  for (int i = 0; i < Ht; ++i) ys[i] = std::min(H - 1, static_cast<int>(static_cast<long>(i) * H / Ht));
  for (int j = 0; j < Wt; ++j) xsrc[j] = std::min(W - 1, static_cast<int>(static_cast<long>(j) * W / Wt));
  Tensor<T> out({N, C, Ht, Wt});
  for (int p = 0; p < N * C; ++p)
    for (int i = 0; i < Ht; ++i)
      for (int j = 0; j < Wt; ++j)
        out[(static_cast<std::size_t>(p) * Ht + i) * Wt + j] =
            x.value()[(static_cast<std::size_t>(p) * H + ys[i]) * W + xsrc[j]];
  return make_op<T>(std::move(out), {x}, [=](Node<T>& nd) {
    auto& g = nd.parents[0]->grad_buffer();
    for (int p = 0; p < N * C; ++p)
      for (int i = 0; i < Ht; ++i)
        for (int j = 0; j < Wt; ++j)
          g[(static_cast<std::size_t>(p) * H + ys[i]) * W + xsrc[j]] +=
              nd.grad[(static_cast<std::size_t>(p) * Ht + i) * Wt + j];
  });
}

/// 2x2 max pooling with stride 2 (floor).
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const Shape& xs = x.shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Ho = H / 2, Wo = W / 2;
  require(Ho > 0 && Wo > 0, Errc::kShape, "max_pool2 on too small input");
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::size_t> arg(out.size());
  for (int p = 0; p < N * C; ++p)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        std::size_t best = (static_cast<std::size_t>(p) * H + 2 * i) * W + 2 * j;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t k = (static_cast<std::size_t>(p) * H + 2 * i + dy) * W + 2 * j + dx;
            if (x.value()[k] > x.value()[best]) best = k;
          }
        const std::size_t o = (static_cast<std::size_t>(p) * Ho + i) * Wo + j;
        out[o] = x.value()[best];
        arg[o] = best;
      }
  return make_op<T>(std::move(out), {x}, [arg = std::move(arg)](Node<T>& nd) {
    auto& g = nd.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += nd.grad[o];
  });
}

/// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& xs = x.shape();
  const int N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor<T> out({N, C});
  for (int p = 0; p < N * C; ++p) {
    T s = 0;
    for (int i = 0; i < HW; ++i) s += x.value()[static_cast<std::size_t>(p) * HW + i];
    out[p] = s / T(HW);
  }
  return make_op<T>(std::move(out), {x}, [N, C, HW](Node<T>& nd) {
    auto& g = nd.parents[0]->grad_buffer();
    for (int p = 0; p < N * C; ++p)
      for (int i = 0; i < HW; ++i) g[static_cast<std::size_t>(p) * HW + i] += nd.grad[p] / T(HW);
  });
}

/// Picks entries by flat index; result has shape [indices.size()].
template <typename T>
Var<T> gather(const Var<T>& x, std::vector<std::size_t> indices) {
  Tensor<T> out({static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = x.value()[indices[i]];
  return make_op<T>(std::move(out), {x}, [idx = std::move(indices)](Node<T>& nd) {
    auto& g = nd.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += nd.grad[i];
  });
}

/// Mean softmax cross-entropy over rows. logits: [N,K], labels in [0,K).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  require(s.size() == 2 && static_cast<std::size_t>(s[0]) == labels.size(), Errc::kShape,
          "softmax_cross_entropy: logits " + shape_str(s) + " vs " +
              std::to_string(labels.size()) + " labels");
  const int N = s[0], K = s[1];
  Tensor<T> prob({N, K});
  T loss = 0;
  for (int i = 0; i < N; ++i) {
    const T* row = logits.value().data() + static_cast<std::size_t>(i) * K;
    const T mx = *std::max_element(row, row + K);
    T z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (int k = 0; k < K; ++k) prob[i * K + k] = std::exp(row[k] - mx) / z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  if (N > 0) loss /= T(N);
  return make_op<T>(Tensor<T>({1}, loss), {logits},
                    [prob = std::move(prob), labels, N, K](Node<T>& nd) {
                      auto& g = nd.parents[0]->grad_buffer();
                      const T sc = nd.grad[0] / T(std::max(N, 1));
                      for (int i = 0; i < N; ++i)
                        for (int k = 0; k < K; ++k)
                          g[i * K + k] += sc * (prob[i * K + k] - (k == labels[i] ? T(1) : T(0)));
                    });
}

template <typename T>
inline T smooth_l1_scalar(T x, T beta) {
  const T a = std::abs(x);
  return a < beta ? T(0.5) * x * x / beta : a - T(0.5) * beta;
}

template <typename T>
inline T smooth_l1_grad_scalar(T x, T beta) {
  const T a = std::abs(x);
  if (a < beta) return x / beta;
  return x > T(0) ? T(1) : T(-1);
}

/// Sum of smooth-L1(pred - target) over all entries, divided by `normalizer`.
template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<T>& target, T beta, T normalizer = T(1)) {
  require(pred.value().same_shape(target), Errc::kShape, "smooth_l1 shape mismatch");
  T loss = 0;
  for (std::size_t i = 0; i < target.size(); ++i)
    loss += smooth_l1_scalar(pred.value()[i] - target[i], beta);
  return make_op<T>(Tensor<T>({1}, loss / normalizer), {pred},
                    [target, beta, normalizer](Node<T>& nd) {
                      auto& g = nd.parents[0]->grad_buffer();
                      const auto& p = nd.parents[0]->value;
                      for (std::size_t i = 0; i < g.size(); ++i)
                        g[i] += nd.grad[0] * smooth_l1_grad_scalar(p[i] - target[i], beta) / normalizer;
                    });
}

/// Sum of binary cross-entropy with logits, divided by `normalizer`.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets, T normalizer = T(1)) {
  require(logits.value().same_shape(targets), Errc::kShape, "bce_with_logits shape mismatch");
  T loss = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T x = logits.value()[i];
    // log(1 + exp(-|x|)) + max(x, 0) - x*t
    loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0)) - x * targets[i];
  }
  return make_op<T>(Tensor<T>({1}, loss / normalizer), {logits},
                    [targets, normalizer](Node<T>& nd) {
                      auto& g = nd.parents[0]->grad_buffer();
                      const auto& x = nd.parents[0]->value;
                      for (std::size_t i = 0; i < g.size(); ++i)
                        g[i] += nd.grad[0] * (sigmoid_scalar(x[i]) - targets[i]) / normalizer;
                    });
}

}  // namespace annodet::nn
