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

#include <algorithm>
#include <cmath>

#include "annodet/core/error.hpp"
#include "annodet/dataset/dataset.hpp"

namespace annodet::dataset {

void validate_scene(const Scene& scene) {
  require(scene.boxes.size() == scene.labels.size(), Errc::kValidation,
          "scene '" + scene.id + "': " + std::to_string(scene.boxes.size()) + " boxes but " +
              std::to_string(scene.labels.size()) + " labels");
  const double W = scene.image.empty() ? 1e300 : scene.width();
  const double H = scene.image.empty() ? 1e300 : scene.height();
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const Box& b = scene.boxes[i];
    require(b.valid(), Errc::kValidation,
            "scene '" + scene.id + "': box " + std::to_string(i) + " has x_min >= x_max or y_min >= y_max");
    require(b.x_min >= 0 && b.y_min >= 0 && b.x_max <= W && b.y_max <= H, Errc::kValidation,
            "scene '" + scene.id + "': box " + std::to_string(i) + " lies outside the image");
    require(scene.labels[i] >= 1, Errc::kValidation,
            "scene '" + scene.id + "': label " + std::to_string(i) + " must be >= 1 (0 is background)");
  }
}

AnnotationVector compute_annotation(const Box& box, int label, int patch_side) {
  const double w = box.width(), h = box.height();
  require(w > 0 && h > 0, Errc::kInvalidBox, "box must have positive width and height");
  require(w <= patch_side && h <= patch_side, Errc::kInvalidBox,
          "box larger than the patch side " + std::to_string(patch_side));
  require(label >= 1, Errc::kInvalidBox, "object label must be >= 1");
  AnnotationVector a;
  a.class_index = label;
  a.area_norm = (w * h) / (double(patch_side) * double(patch_side));
  a.squareness = std::min(w, h) / std::max(w, h);
  a.is_background = false;
  return a;
}

std::vector<int> window_offsets(int extent, int window, int stride) {
  std::vector<int> out;
  if (window > extent || stride < 1) return out;
  for (int o = 0; o + window <= extent; o += stride) out.push_back(o);
  return out;
}

Tensor<float> crop(const Tensor<float>& image, int x, int y, int side) {
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  require(x >= 0 && y >= 0 && x + side <= W && y + side <= H, Errc::kUnsupportedGeometry,
          "crop window outside the image");
  Tensor<float> out({C, side, side});
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < side; ++r)
      std::copy_n(&image.at(c, y + r, x), side, &out.at(c, r, 0));
  return out;
}

std::vector<Patch> tile_scene(const Scene& scene, const TileOptions& opts) {
  const int side = opts.patch_side;
  require(side >= 1 && side <= std::min(scene.width(), scene.height()), Errc::kUnsupportedGeometry,
          "scene '" + scene.id + "' is smaller than patch side " + std::to_string(side));
  std::vector<Patch> out;
  for (int y : window_offsets(scene.height(), side, opts.tile_stride)) {
    for (int x : window_offsets(scene.width(), side, opts.tile_stride)) {
      const Box win{double(x), double(y), double(x + side), double(y + side)};
      int inside = -1, n_inside = 0;
      bool clutter = false;
      for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
        const Box& b = scene.boxes[i];
        const bool contained = b.x_min >= win.x_min && b.y_min >= win.y_min &&
                               b.x_max <= win.x_max && b.y_max <= win.y_max;
        if (contained) {
          inside = static_cast<int>(i);
          ++n_inside;
          continue;
        }
        const double iw = std::min(b.x_max, win.x_max) - std::max(b.x_min, win.x_min);
        const double ih = std::min(b.y_max, win.y_max) - std::max(b.y_min, win.y_min);
        const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
        if (inter / b.area() > opts.background_iou_max) clutter = true;
      }
      if (clutter || n_inside > 1) continue;
      Patch p;
      p.pixels = crop(scene.image, x, y, side);
      p.source_scene_id = scene.id;
      p.origin_x = x;
      p.origin_y = y;
      p.side = side;
      if (n_inside == 1) {
        p.object_box = scene.boxes[inside];
        p.object_label = scene.labels[inside];
        p.annotation = compute_annotation(p.object_box, p.object_label, side);
      } else {
        p.annotation = AnnotationVector::background();
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace annodet::dataset
