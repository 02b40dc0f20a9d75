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

#include "annodet/core/tensor.hpp"

namespace annodet {

/// Source coordinate for output index `i` when resizing `in` samples to `out`.
inline double bilinear_source_coord(int i, int in, int out, bool align_corners) {
  if (align_corners) {
    if (out == 1) return 0.0;
    return double(i) * double(in - 1) / double(out - 1);
  }
  const double src = (double(i) + 0.5) * double(in) / double(out) - 0.5;
  return std::clamp(src, 0.0, double(in - 1));
}

/// Channel-wise bilinear resize of a CxHxW tensor. Every output value is a
/// convex combination of at most four input values of the same channel.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& in, int out_h, int out_w, bool align_corners) {
  require(in.rank() == 3, Errc::kShape, "resize_bilinear expects CxHxW, got " + shape_str(in.shape()));
  require(out_h >= 1 && out_w >= 1, Errc::kShape, "resize target must be at least 1x1");
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [&](int in_n, int out_n) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
      const double s = bilinear_source_coord(o, in_n, out_n, align_corners);
      const int i0 = std::min(static_cast<int>(std::floor(s)), in_n - 1);
      const int i1 = std::min(i0 + 1, in_n - 1);
      t[o] = {i0, i1, s - double(i0)};
    }
    return t;
  };
  const auto ty = taps(H, out_h);
  const auto tx = taps(W, out_w);
  Tensor<T> out({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (int x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double v00 = in.at(c, a.i0, b.i0), v01 = in.at(c, a.i0, b.i1);
        const double v10 = in.at(c, a.i1, b.i0), v11 = in.at(c, a.i1, b.i1);
        // Exact pass-through when the source coordinate is integral.
        double v;
        if (a.f == 0.0 && b.f == 0.0) {
          v = v00;
        } else {
          const double top = v00 + (v01 - v00) * b.f;
          const double bot = v10 + (v11 - v10) * b.f;
          v = top + (bot - top) * a.f;
          v = std::clamp(v, std::min({v00, v01, v10, v11}), std::max({v00, v01, v10, v11}));
        }
        out.at(c, y, x) = static_cast<T>(v);
      }
    }
  return out;
}

}  // namespace annodet
