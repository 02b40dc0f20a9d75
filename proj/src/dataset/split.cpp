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
#include <map>
#include <numeric>
#include <random>

#include "annodet/core/error.hpp"
#include "annodet/dataset/dataset.hpp"

namespace annodet::dataset {
namespace {

// Largest-remainder apportionment of n items, then at least one per split.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double ideal = ratios[s] * double(n);
    counts[s] = static_cast<std::size_t>(std::floor(ideal));
    rem[s] = ideal - double(counts[s]);
    assigned += counts[s];
  }
  while (assigned < n) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (rem[s] > rem[best]) best = s;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  for (int s = 0; s < 3; ++s) {
    if (counts[s] > 0) continue;
    int donor = 0;
    for (int d = 1; d < 3; ++d)
      if (counts[d] > counts[donor]) donor = d;
    --counts[donor];
    ++counts[s];
  }
  return counts;
}

}  // namespace

SplitIndices stratified_split(const std::vector<int>& class_keys, const SplitSpec& spec) {
  const std::array<double, 3> ratios{spec.train, spec.val, spec.test};
  for (double r : ratios)
    require(r > 0 && r < 1, Errc::kInvalidRatio, "every split ratio must lie in (0,1)");
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, Errc::kInvalidRatio,
          "split ratios must sum to 1");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < class_keys.size(); ++i) by_class[class_keys[i]].push_back(i);

  std::mt19937_64 rng(spec.seed);
  SplitIndices out;
  for (auto& [cls, idx] : by_class) {
    require(idx.size() >= 3, Errc::kStratificationInfeasible,
            "class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                " items; at least 3 are needed");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto counts = apportion(idx.size(), ratios);
    auto it = idx.begin();
    out.train.insert(out.train.end(), it, it + counts[0]);
    it += counts[0];
    out.val.insert(out.val.end(), it, it + counts[1]);
    it += counts[1];
    out.test.insert(out.test.end(), it, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

int scene_class_key(const Scene& scene) {
  std::map<int, int> counts;
  for (int l : scene.labels) ++counts[l];
  int best = 0, best_n = 0;
  for (const auto& [l, n] : counts)
    if (n > best_n) {
      best = l;
      best_n = n;
    }
  return best;
}

}  // namespace annodet::dataset
