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

#include "annodet/detector/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "annodet/core/error.hpp"

namespace annodet::detector {

double box_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::size_t AnchorSet::total() const {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.boxes.size();
  return n;
}

AnchorSet generate_anchors(const std::vector<std::array<int, 2>>& shapes, const std::vector<double>& strides,
                           const AnchorSpec& spec) {
  require(shapes.size() == strides.size() && shapes.size() <= spec.sizes.size(), Errc::kConfiguration,
          "anchor spec needs one base size per pyramid level");
  AnchorSet set;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    LevelAnchors la;
    la.height = shapes[l][0];
    la.width = shapes[l][1];
    la.per_cell = spec.per_cell();
    la.stride = strides[l];
    la.boxes.reserve(std::size_t(la.height) * la.width * la.per_cell);
    for (int y = 0; y < la.height; ++y)
      for (int x = 0; x < la.width; ++x) {
        const double cx = (x + 0.5) * la.stride, cy = (y + 0.5) * la.stride;
        for (double s : spec.scales)
          for (double r : spec.ratios) {
            const double size = spec.sizes[l] * s;
            const double w = size / std::sqrt(r), h = size * std::sqrt(r);
            la.boxes.push_back(Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
          }
      }
    set.levels.push_back(std::move(la));
  }
  return set;
}

std::array<double, 4> BoxCoder::encode(const Box& box, const Box& anchor) const {
  const double aw = anchor.width(), ah = anchor.height();
  const double ax = anchor.x_min + 0.5 * aw, ay = anchor.y_min + 0.5 * ah;
  const double bw = box.width(), bh = box.height();
  const double bx = box.x_min + 0.5 * bw, by = box.y_min + 0.5 * bh;
  return {weights[0] * (bx - ax) / aw, weights[1] * (by - ay) / ah, weights[2] * std::log(bw / aw),
          weights[3] * std::log(bh / ah)};
}

Box BoxCoder::decode(const std::array<double, 4>& d, const Box& anchor) const {
  const double aw = anchor.width(), ah = anchor.height();
  const double ax = anchor.x_min + 0.5 * aw, ay = anchor.y_min + 0.5 * ah;
  const double dx = d[0] / weights[0], dy = d[1] / weights[1];
  const double dw = std::min(d[2] / weights[2], clip), dh = std::min(d[3] / weights[3], clip);
  const double cx = ax + dx * aw, cy = ay + dy * ah;
  const double w = aw * std::exp(dw), h = ah * std::exp(dh);
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip_box(const Box& b, double width, double height) {
  return Box{std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height), std::clamp(b.x_max, 0.0, width),
             std::clamp(b.y_max, 0.0, height)};
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_threshold) {
  require(boxes.size() == scores.size(), Errc::kShape, "nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t a = order[i];
    if (dead[a]) continue;
    keep.push_back(a);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t b = order[j];
      if (!dead[b] && box_iou(boxes[a], boxes[b]) > iou_threshold) dead[b] = 1;
    }
  }
  return keep;
}

int assign_level(const Box& box, const LevelRule& rule) {
  const double s = std::sqrt(std::max(box.area(), 1e-12));
  const int l = rule.canonical_level + static_cast<int>(std::floor(std::log2(s / rule.canonical_size) + 1e-9));
  return std::clamp(l, rule.min_level, rule.max_level);
}

}  // namespace annodet::detector
