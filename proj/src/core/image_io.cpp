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

#include "annodet/core/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "annodet/core/error.hpp"

namespace annodet {

Tensor<float> read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  require(png_image_begin_read_from_file(&img, path.c_str()) != 0, Errc::kIo,
          "cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(Errc::kIo, "cannot decode PNG " + path.string() + ": " + msg);
  }
  const int W = static_cast<int>(img.width), H = static_cast<int>(img.height);
  Tensor<float> out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = buf[(std::size_t(y) * W + x) * 3 + c] / 255.0f;
  return out;
}

Raster to_raster(const Tensor<float>& image) {
  require(image.rank() == 3 && image.dim(0) == 3, Errc::kShape, "expected a 3xHxW image");
  const int H = image.dim(1), W = image.dim(2);
  Raster r(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        r.rgb[(std::size_t(y) * W + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return r;
}

void write_png(const std::filesystem::path& path, const Raster& raster) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(raster.width);
  img.height = static_cast<png_uint_32>(raster.height);
  img.format = PNG_FORMAT_RGB;
  require(png_image_write_to_file(&img, path.c_str(), 0, raster.rgb.data(), 0, nullptr) != 0,
          Errc::kIo, "cannot write PNG " + path.string() + ": " + img.message);
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  write_png(path, to_raster(image));
}

}  // namespace annodet
