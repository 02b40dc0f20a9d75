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

#include <algorithm>
#include <cmath>
#include <vector>

#include "annodet/detector/geometry.hpp"
#include "annodet/nn/autograd.hpp"

namespace annodet::detector {

struct RoiAlignOptions {
  int output_size = 7;
  int sampling_ratio = 2;  // samples per bin along each axis; <= 0 picks ceil(bin size)
};

namespace detail {

struct BilinearTap {
  int idx[4];
  double w[4];
};

// Half-pixel aligned sampling; points more than one cell outside the map read 0.
inline bool bilinear_tap(double y, double x, int H, int W, BilinearTap& t) {
  if (y < -1.0 || y > H || x < -1.0 || x > W) return false;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y0 * W + x0;
  t.idx[1] = y0 * W + x1;
  t.idx[2] = y1 * W + x0;
  t.idx[3] = y1 * W + x1;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  return true;
}

// Taps for every (bin, sample) of one RoI; each bin averages its samples.
inline void roi_taps(const Box& box, double scale, int H, int W, const RoiAlignOptions& opt,
                     std::vector<std::vector<BilinearTap>>& bins) {
  const int S = opt.output_size;
  const double x0 = box.x_min * scale - 0.5, y0 = box.y_min * scale - 0.5;
  const double bw = (box.x_max - box.x_min) * scale / S, bh = (box.y_max - box.y_min) * scale / S;
  const int gy = opt.sampling_ratio > 0 ? opt.sampling_ratio : std::max(1, static_cast<int>(std::ceil(bh)));
  const int gx = opt.sampling_ratio > 0 ? opt.sampling_ratio : std::max(1, static_cast<int>(std::ceil(bw)));
  bins.assign(std::size_t(S) * S, {});
  for (int py = 0; py < S; ++py)
    for (int px = 0; px < S; ++px) {
      auto& taps = bins[std::size_t(py) * S + px];
      taps.reserve(std::size_t(gy) * gx);
      for (int iy = 0; iy < gy; ++iy) {
        const double y = y0 + py * bh + (iy + 0.5) * bh / gy;
        for (int ix = 0; ix < gx; ++ix) {
          const double x = x0 + px * bw + (ix + 0.5) * bw / gx;
          BilinearTap t;
          if (bilinear_tap(y, x, H, W, t)) {
            const double inv = 1.0 / double(gy * gx);
            for (double& w : t.w) w *= inv;
            taps.push_back(t);
          }
        }
      }
    }
}

}  // namespace detail

/// RoIAlign over a feature pyramid. `levels[k]` is a [1, C, H_k, W_k] map with
/// `scales[k]` = 1 / stride; RoI r samples `levels[level_of[r]]`. Output is
/// [R, C, S, S].
template <typename T>
nn::Var<T> roi_align(const std::vector<nn::Var<T>>& levels, const std::vector<double>& scales,
                     const std::vector<Box>& rois, const std::vector<int>& level_of, const RoiAlignOptions& opt) {
  require(levels.size() == scales.size() && !levels.empty(), Errc::kShape, "roi_align: one scale per level");
  require(rois.size() == level_of.size(), Errc::kShape, "roi_align: one level index per RoI");
  require(opt.output_size >= 1, Errc::kInvalidConfig, "roi_align output_size must be >= 1");
  const int C = levels[0].shape()[1];
  for (const auto& l : levels)
    require(l.shape().size() == 4 && l.shape()[0] == 1 && l.shape()[1] == C, Errc::kShape,
            "roi_align levels must be [1,C,H,W] with a shared C");
  for (const auto& b : rois)
    require(b.x_max > b.x_min && b.y_max > b.y_min, Errc::kDegenerateBox, "roi_align got a zero-area box");
  const int R = static_cast<int>(rois.size()), S = opt.output_size, SS = S * S;

  // taps[r][bin] precomputed once and shared with the backward pass.
  std::vector<std::vector<std::vector<detail::BilinearTap>>> taps(rois.size());
  Tensor<T> out({R, C, S, S});
  for (int r = 0; r < R; ++r) {
    const int l = level_of[r];
    require(l >= 0 && l < static_cast<int>(levels.size()), Errc::kShape, "roi_align: level index out of range");
    const int H = levels[l].shape()[2], W = levels[l].shape()[3];
    detail::roi_taps(rois[r], scales[l], H, W, opt, taps[r]);
    const T* f = levels[l].value().data();
    for (int c = 0; c < C; ++c) {
      const T* fc = f + std::size_t(c) * H * W;
      T* o = out.data() + (std::size_t(r) * C + c) * SS;
      for (int b = 0; b < SS; ++b) {
        double acc = 0;
        for (const auto& t : taps[r][b])
          acc += t.w[0] * fc[t.idx[0]] + t.w[1] * fc[t.idx[1]] + t.w[2] * fc[t.idx[2]] + t.w[3] * fc[t.idx[3]];
        o[b] = static_cast<T>(acc);
      }
    }
  }
  return nn::make_op<T>(std::move(out), levels, [taps = std::move(taps), level_of, C, SS](nn::Node<T>& nd) {
    for (std::size_t r = 0; r < taps.size(); ++r) {
      const int l = level_of[r];
      if (!nn::wants_grad(nd, static_cast<std::size_t>(l))) continue;
      auto& parent = *nd.parents[l];
      const int H = parent.value.dim(2), W = parent.value.dim(3);
      auto& g = parent.grad_buffer();
      for (int c = 0; c < C; ++c) {
        T* gc = g.data() + std::size_t(c) * H * W;
        const T* go = nd.grad.data() + (r * C + c) * SS;
        for (int b = 0; b < SS; ++b)
          for (const auto& t : taps[r][b])
            for (int k = 0; k < 4; ++k) gc[t.idx[k]] += static_cast<T>(t.w[k] * go[b]);
      }
    }
  });
}

}  // namespace annodet::detector
