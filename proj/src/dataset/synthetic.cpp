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
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "annodet/core/error.hpp"
#include "annodet/dataset/dataset.hpp"

namespace annodet::dataset {
namespace {

constexpr int kMaxShapes = 6;

// Base colour per class (index 1..6); rectangles, ellipses, triangles,
// diamonds, crosses, rings.
constexpr std::array<std::array<float, 3>, kMaxShapes> kPalette{{
    {0.86f, 0.26f, 0.20f},
    {0.22f, 0.74f, 0.30f},
    {0.25f, 0.36f, 0.88f},
    {0.90f, 0.80f, 0.20f},
    {0.80f, 0.30f, 0.80f},
    {0.20f, 0.80f, 0.82f},
}};

bool inside_shape(int cls, double u, double v) {
  // (u, v) in [0,1]^2, relative to the shape's box.
  switch (cls) {
    case 1:
      return true;
    case 2: {
      const double du = (u - 0.5) * 2, dv = (v - 0.5) * 2;
      return du * du + dv * dv <= 1.0;
    }
    case 3:
      return std::abs(u - 0.5) <= 0.5 * v;
    case 4:
      return std::abs(u - 0.5) + std::abs(v - 0.5) <= 0.5;
    case 5:
      return std::abs(u - 0.5) <= 0.17 || std::abs(v - 0.5) <= 0.17;
    default: {
      const double du = (u - 0.5) * 2, dv = (v - 0.5) * 2;
      const double r = du * du + dv * dv;
      return r <= 1.0 && r >= 0.3;
    }
  }
}

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(c * 255.0) / 255.0);
}

bool overlaps(const Box& a, const Box& b, double gap) {
  return a.x_min < b.x_max + gap && b.x_min < a.x_max + gap && a.y_min < b.y_max + gap &&
         b.y_min < a.y_max + gap;
}

}  // namespace

GeneratorConfig GeneratorConfig::from_keyvalue(const KeyValueConfig& kv) {
  GeneratorConfig c;
  c.image_size = static_cast<int>(kv.get_int("image_size", c.image_size));
  c.n_classes = static_cast<int>(kv.get_int("n_classes", c.n_classes));
  c.objects_min = static_cast<int>(kv.get_int("objects_min", c.objects_min));
  c.objects_max = static_cast<int>(kv.get_int("objects_max", c.objects_max));
  c.size_min = static_cast<int>(kv.get_int("size_min", c.size_min));
  c.size_max = static_cast<int>(kv.get_int("size_max", c.size_max));
  c.n_scenes = static_cast<int>(kv.get_int("n_scenes", c.n_scenes));
  c.validate();
  return c;
}

void GeneratorConfig::validate() const {
  require(image_size >= 8, Errc::kInvalidConfig, "image_size must be >= 8");
  require(n_classes >= 1 && n_classes <= kMaxShapes, Errc::kInvalidConfig,
          "n_classes must be in [1," + std::to_string(kMaxShapes) + "]");
  require(objects_min >= 0 && objects_max >= objects_min, Errc::kInvalidConfig,
          "objects_min/objects_max must satisfy 0 <= min <= max");
  require(size_min >= 2 && size_max >= size_min, Errc::kInvalidConfig,
          "size_min/size_max must satisfy 2 <= min <= max");
  require(size_max <= image_size, Errc::kInvalidConfig,
          "object size " + std::to_string(size_max) + " exceeds image size " + std::to_string(image_size));
  require(n_scenes >= 0, Errc::kInvalidConfig, "n_scenes must be >= 0");
}

std::vector<Scene> generate_synthetic_scenes(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int S = config.image_size;

  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(config.n_scenes));
  for (int s = 0; s < config.n_scenes; ++s) {
    Scene scene;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%05d", s);
    scene.id = id;

    // Low-saturation background with a linear gradient and pixel noise.
    std::array<double, 3> base{};
    const double grey = 0.3 + 0.3 * unit(rng);
    for (auto& b : base) b = grey + 0.06 * (unit(rng) - 0.5);
    const double gx = 0.15 * (unit(rng) - 0.5), gy = 0.15 * (unit(rng) - 0.5);
    std::vector<double> img(std::size_t(3) * S * S);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          img[(std::size_t(c) * S + y) * S + x] =
              base[c] + gx * (double(x) / S - 0.5) + gy * (double(y) / S - 0.5) + 0.03 * noise(rng);

    const int n_obj = std::uniform_int_distribution<int>(config.objects_min, config.objects_max)(rng);
    std::uniform_int_distribution<int> size_dist(config.size_min, config.size_max);
    std::uniform_int_distribution<int> label_dist(1, config.n_classes);
    for (int k = 0; k < n_obj; ++k) {
      const int label = label_dist(rng);
      const int w = size_dist(rng), h = size_dist(rng);
      Box placed;
      bool ok = false;
      for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
        const int x0 = std::uniform_int_distribution<int>(0, S - w)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, S - h)(rng);
        placed = Box{double(x0), double(y0), double(x0 + w), double(y0 + h)};
        ok = std::none_of(scene.boxes.begin(), scene.boxes.end(),
                          [&](const Box& b) { return overlaps(b, placed, 2.0); });
      }
      if (!ok) continue;

      std::array<double, 3> colour{};
      for (int c = 0; c < 3; ++c) colour[c] = kPalette[label - 1][c] + 0.12 * (unit(rng) - 0.5);
      const double phase = 6.2831853 * unit(rng);
      const double freq = 0.5 + 0.3 * unit(rng);
      const int x0 = static_cast<int>(placed.x_min), y0 = static_cast<int>(placed.y_min);
      for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) {
          const double u = (x + 0.5 - x0) / w, v = (y + 0.5 - y0) / h;
          if (!inside_shape(label, u, v)) continue;
          // Class-specific stripe orientation as texture.
          const double t = (label % 2 ? x : y) + (label % 3 == 0 ? y : 0);
          const double tex = 1.0 + 0.12 * std::sin(freq * t + phase);
          for (int c = 0; c < 3; ++c)
            img[(std::size_t(c) * S + y) * S + x] = colour[c] * tex + 0.02 * noise(rng);
        }
      scene.boxes.push_back(placed);
      scene.labels.push_back(label);
    }

    scene.image = Tensor<float>({3, S, S});
    for (std::size_t i = 0; i < img.size(); ++i) scene.image[i] = quantize(img[i]);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

}  // namespace annodet::dataset
