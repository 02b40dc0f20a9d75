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

#include <filesystem>
#include <random>
#include <string>

#include "annodet/core/error.hpp"
#include "annodet/dataset/dataset.hpp"
#include "doctest.h"

// Checks that `expr` throws annodet::Error carrying `code`.
#define CHECK_ERRC(expr, want)                                    \
  do {                                                            \
    bool thrown_ = false;                                         \
    try {                                                         \
      (void)(expr);                                               \
    } catch (const annodet::Error& e_) {                          \
      thrown_ = true;                                             \
      CHECK_MESSAGE(e_.code() == (want), e_.what());              \
    }                                                             \
    CHECK_MESSAGE(thrown_, "expected an error from " #expr);      \
  } while (0)

namespace testing {

inline annodet::dataset::Scene blank_scene(const std::string& id, int h, int w, float fill = 0.2f) {
  annodet::dataset::Scene s;
  s.id = id;
  s.image = annodet::Tensor<float>({3, h, w}, fill);
  return s;
}

inline annodet::Tensor<double> random_tensor(annodet::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  annodet::Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline annodet::Tensor<float> random_tensor_f(annodet::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  annodet::Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = static_cast<float>(u(rng));
  return t;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("annodet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
