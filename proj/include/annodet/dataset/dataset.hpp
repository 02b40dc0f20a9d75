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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "annodet/core/keyvalue.hpp"
#include "annodet/core/tensor.hpp"

namespace annodet::dataset {

/// Axis-aligned box in pixel coordinates, [x_min, x_max) x [y_min, y_max).
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Scene {
  std::string id;
  Tensor<float> image;  // 3xHxW in [0,1]
  std::vector<Box> boxes;
  std::vector<int> labels;  // class indices >= 1

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

/// Throws kValidation naming the scene when the box/label invariants break.
void validate_scene(const Scene& scene);

/// Per-patch supervision. Background is class 0 with the full-extent box.
struct AnnotationVector {
  int class_index = 0;
  double area_norm = 1.0;
  double squareness = 1.0;
  bool is_background = true;

  static AnnotationVector background() { return {}; }
  friend bool operator==(const AnnotationVector&, const AnnotationVector&) = default;
};

AnnotationVector compute_annotation(const Box& box, int label, int patch_side);

struct Patch {
  Tensor<float> pixels;  // 3xSxS
  AnnotationVector annotation;
  std::string source_scene_id;
  int origin_x = 0;
  int origin_y = 0;
  int side = 0;
  // Scene-coordinate box and label of the contributing object (object patches only).
  Box object_box;
  int object_label = 0;
};

struct TileOptions {
  int patch_side = 48;
  int tile_stride = 16;
  // Largest fraction of any object's area that may fall inside a window
  // without that object counting as present.
  double background_iou_max = 0.05;
};

/// Window positions 0, stride, ... along an axis of `extent` pixels, dropping partial windows.
std::vector<int> window_offsets(int extent, int window, int stride);

Tensor<float> crop(const Tensor<float>& image, int x, int y, int side);

std::vector<Patch> tile_scene(const Scene& scene, const TileOptions& opts);

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Stratifies item indices by `class_keys`, shuffling within each class.
/// Every class must have at least three items.
SplitIndices stratified_split(const std::vector<int>& class_keys, const SplitSpec& spec);

/// Stratification key for a scene: most frequent label (ties to the lower
/// index), 0 for scenes without objects.
int scene_class_key(const Scene& scene);

struct GeneratorConfig {
  int image_size = 128;
  int n_classes = 3;
  int objects_min = 1;
  int objects_max = 3;
  int size_min = 12;
  int size_max = 36;
  int n_scenes = 200;

  static GeneratorConfig from_keyvalue(const KeyValueConfig& kv);
  void validate() const;
};

std::vector<Scene> generate_synthetic_scenes(const GeneratorConfig& config, std::uint64_t seed);

/// JSON manifest with images stored as PNG next to it (paths relative to the
/// manifest directory).
void save_manifest(const std::vector<Scene>& scenes, const std::filesystem::path& path);
std::vector<Scene> load_manifest(const std::filesystem::path& path);
/// Parses manifest text; images are resolved against `base_dir` unless
/// `load_images` is false.
std::vector<Scene> parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                                  bool load_images = true);

}  // namespace annodet::dataset
