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

#include <array>
#include <vector>

#include "annodet/dataset/dataset.hpp"

namespace annodet::detector {

using dataset::Box;

/// IoU without validity checks; 0 when either box has no area.
double box_iou(const Box& a, const Box& b);

/// Anchors for one pyramid level, ordered (row, column, anchor) so that
/// anchor k at cell (y, x) has flat index (y * W + x) * A + k.
struct LevelAnchors {
  int height = 0;
  int width = 0;
  int per_cell = 0;
  double stride = 0;
  std::vector<Box> boxes;
};

struct AnchorSet {
  std::vector<LevelAnchors> levels;
  std::size_t total() const;
};

struct AnchorSpec {
  std::vector<double> sizes{16, 32, 64, 128};  // base size per level P2..P5
  std::vector<double> ratios{0.5, 1.0, 2.0};  // height / width
  std::vector<double> scales{1.0, 1.5};

  int per_cell() const { return static_cast<int>(ratios.size() * scales.size()); }
};

/// `shapes` and `strides` are per level; sizes are taken in the same order.
AnchorSet generate_anchors(const std::vector<std::array<int, 2>>& shapes, const std::vector<double>& strides,
                           const AnchorSpec& spec);

/// Faster R-CNN box parameterisation with per-coordinate weights.
struct BoxCoder {
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  double clip = 4.135166556742356;  // log(1000/16)

  std::array<double, 4> encode(const Box& box, const Box& anchor) const;
  Box decode(const std::array<double, 4>& deltas, const Box& anchor) const;
};

Box clip_box(const Box& b, double width, double height);

/// Greedy NMS. Candidates are visited by descending score; equal scores
/// resolve to the lower input index. Returns kept input indices in visit order.
std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double iou_threshold);

struct LevelRule {
  double canonical_size = 32.0;
  int canonical_level = 3;
  int min_level = 2;
  int max_level = 5;
};

/// Pyramid level for an RoI: canonical_level + floor(log2(sqrt(area) / canonical_size)), clamped.
int assign_level(const Box& box, const LevelRule& rule);

}  // namespace annodet::detector
