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
#include <vector>

#include "annodet/core/tensor.hpp"

namespace annodet {

/// Reads an 8-bit PNG into a 3xHxW tensor with values in [0,1].
Tensor<float> read_png(const std::filesystem::path& path);

/// Writes a 3xHxW tensor in [0,1] as an 8-bit RGB PNG (values rounded to k/255).
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Interleaved RGB8 raster used by the plotting code.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Raster(int w, int h, std::uint8_t fill = 0) : width(w), height(h), rgb(std::size_t(w) * h * 3, fill) {}
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &rgb[(std::size_t(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

Raster to_raster(const Tensor<float>& image);
void write_png(const std::filesystem::path& path, const Raster& raster);

}  // namespace annodet
