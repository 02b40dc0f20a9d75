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
#include <map>
#include <string>
#include <vector>

#include "annodet/latentgrid/latentgrid.hpp"
#include "annodet/nn/ops.hpp"
#include "annodet/nn/parameters.hpp"

namespace annodet::fusion {

using nn::Var;

/// Level id ("P2".."P5") to a [1, C, H_l, W_l] feature map.
template <typename T>
using PyramidFeatures = std::map<std::string, Var<T>>;

inline const std::vector<std::string>& all_levels() {
  static const std::vector<std::string> kLevels{"P2", "P3", "P4", "P5"};
  return kLevels;
}

enum class FusionMode { kAdditive, kFilm, kMask };
enum class InitPolicy { kBaselineIdentity, kRandom };

FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode m);
InitPolicy parse_init_policy(const std::string& s);
std::string to_string(InitPolicy p);

struct FusionConfig {
  bool enabled = false;
  FusionMode mode = FusionMode::kMask;
  std::vector<std::string> levels = all_levels();
  InitPolicy init = InitPolicy::kBaselineIdentity;
  bool align_corners = true;
  double mask_bias = 10.0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Operators. All take batched [N, *, H, W] maps and record gradients.

/// Per-pixel linear map D -> C (1x1 convolution).
template <typename T>
Var<T> project_grid(const Var<T>& grid, const Var<T>& weight, const Var<T>& bias) {
  require(grid.shape().size() == 4 && weight.shape().size() == 4 && grid.shape()[1] == weight.shape()[1],
          Errc::kShape,
          "projection expects latent depth " + std::to_string(weight.shape()[1]) + ", got grid " +
              shape_str(grid.shape()));
  return nn::conv2d(grid, weight, bias, 1, 0);
}

template <typename T>
Var<T> fuse_additive(const Var<T>& p, const Var<T>& g) {
  return nn::add(p, g);
}

/// gamma * P + beta with gamma, beta predicted from G by 1x1 convolutions.
template <typename T>
Var<T> fuse_film(const Var<T>& p, const Var<T>& g, const Var<T>& gamma_w, const Var<T>& gamma_b,
                 const Var<T>& beta_w, const Var<T>& beta_b) {
  require(p.shape() == g.shape(), Errc::kShape,
          "FiLM: feature " + shape_str(p.shape()) + " vs grid " + shape_str(g.shape()));
  const Var<T> gamma = nn::conv2d(g, gamma_w, gamma_b, 1, 0);
  const Var<T> beta = nn::conv2d(g, beta_w, beta_b, 1, 0);
  return nn::add(nn::mul(gamma, p), beta);
}

/// sigmoid(h(G)) broadcast over channels, times P.
template <typename T>
Var<T> fuse_mask(const Var<T>& p, const Var<T>& g, const Var<T>& mask_w, const Var<T>& mask_b) {
  require(p.shape() == g.shape(), Errc::kShape,
          "mask: feature " + shape_str(p.shape()) + " vs grid " + shape_str(g.shape()));
  require(mask_w.shape().size() == 4 && mask_w.shape()[0] == 1, Errc::kShape, "mask head must have one output channel");
  const Var<T> m = nn::sigmoid(nn::conv2d(g, mask_w, mask_b, 1, 0));
  return nn::mul_channel_broadcast(m, p);
}

/// Learnable projection and fusion heads for each selected level.
class FusionParams {
 public:
  FusionParams() = default;
  FusionParams(int latent_dim, int channels, const FusionConfig& config, std::uint64_t seed);

  int latent_dim() const { return latent_dim_; }
  int channels() const { return channels_; }
  bool has_level(const std::string& level) const { return params_.contains(level + ".proj.w"); }
  const Var<float>& get(const std::string& level, const std::string& name) const {
    return params_.get(level + "." + name);
  }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }

 private:
  int latent_dim_ = 0;
  int channels_ = 0;
  nn::ParameterSet<float> params_;
};

/// Fuses the grid into every selected level; other levels pass through as
/// the same handles. The grid is resampled to each level's resolution.
PyramidFeatures<float> augment_pyramid(const PyramidFeatures<float>& pyramid, const latentgrid::LatentGrid& grid,
                                       const FusionParams& params, const FusionConfig& config);

}  // namespace annodet::fusion
