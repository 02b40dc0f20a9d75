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
#include <optional>
#include <string>
#include <utility>

#include "annodet/dataset/dataset.hpp"
#include "annodet/embedding/embedding.hpp"

namespace annodet::latentgrid {

/// Dense sliding-window embeddings of one scene, D x H_g x W_g.
struct LatentGrid {
  Tensor<float> values;
  int window = 0;
  int stride = 0;
  std::string scene_id;
  std::uint64_t encoder_checksum = 0;

  int depth() const { return values.dim(0); }
  int rows() const { return values.dim(1); }
  int cols() const { return values.dim(2); }
};

struct ResampleSpec {
  int target_h = 1;
  int target_w = 1;
  bool align_corners = true;
};

/// (H_g, W_g) = (floor((H - window)/stride) + 1, floor((W - window)/stride) + 1).
std::pair<int, int> grid_shape(int height, int width, int window, int stride);

/// Cell (i, j) is the encoding of the window whose top-left corner is
/// (j * stride, i * stride). Partial windows at the border are dropped.
LatentGrid extract_grid(const dataset::Scene& scene, const embedding::PatchEncoder& encoder, int window,
                        int stride, int batch_size = 64);

Tensor<float> resample_grid(const LatentGrid& grid, const ResampleSpec& spec);

/// Binary grid file:
///   "LGRD" | u32 version | i32 D, H_g, W_g, window, stride | u64 encoder checksum |
///   u32 id length | scene id bytes | D*H_g*W_g float32, row-major
std::string encode_grid(const LatentGrid& grid);
LatentGrid decode_grid(const std::string& bytes);
void write_grid(const std::filesystem::path& path, const LatentGrid& grid);
LatentGrid read_grid(const std::filesystem::path& path);

/// On-disk grid cache keyed by (scene id, encoder checksum, window, stride).
class GridCache {
 public:
  explicit GridCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path path_for(const std::string& scene_id, std::uint64_t checksum, int window,
                                 int stride) const;
  std::optional<LatentGrid> lookup(const std::string& scene_id, std::uint64_t checksum, int window,
                                   int stride) const;
  void store(const LatentGrid& grid) const;
  LatentGrid get_or_extract(const dataset::Scene& scene, const embedding::PatchEncoder& encoder, int window,
                            int stride, int batch_size = 64) const;

  long hits() const { return hits_; }
  long misses() const { return misses_; }

 private:
  std::filesystem::path dir_;
  mutable long hits_ = 0;
  mutable long misses_ = 0;
};

}  // namespace annodet::latentgrid
