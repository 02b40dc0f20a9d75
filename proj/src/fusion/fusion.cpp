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

#include "annodet/fusion/fusion.hpp"

#include <algorithm>
#include <random>

#include "annodet/core/error.hpp"

namespace annodet::fusion {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "additive") return FusionMode::kAdditive;
  if (s == "film") return FusionMode::kFilm;
  if (s == "mask") return FusionMode::kMask;
  fail(Errc::kInvalidConfig, "unknown fusion mode '" + s + "' (expected additive, film or mask)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kAdditive: return "additive";
    case FusionMode::kFilm: return "film";
    case FusionMode::kMask: return "mask";
  }
  return "?";
}

InitPolicy parse_init_policy(const std::string& s) {
  if (s == "baseline_identity") return InitPolicy::kBaselineIdentity;
  if (s == "random") return InitPolicy::kRandom;
  fail(Errc::kInvalidConfig, "unknown init policy '" + s + "'");
}

std::string to_string(InitPolicy p) { return p == InitPolicy::kRandom ? "random" : "baseline_identity"; }

void FusionConfig::validate() const {
  if (!enabled) return;
  for (const auto& l : levels)
    require(std::find(all_levels().begin(), all_levels().end(), l) != all_levels().end(), Errc::kInvalidConfig,
            "unknown pyramid level '" + l + "'");
}

FusionParams::FusionParams(int latent_dim, int channels, const FusionConfig& config, std::uint64_t seed)
    : latent_dim_(latent_dim), channels_(channels) {
  config.validate();
  std::mt19937_64 rng(seed);
  const bool identity = config.init == InitPolicy::kBaselineIdentity;
  const int C = channels, D = latent_dim;
  for (const auto& level : config.levels) {
    const std::string p = level + ".";
    // Additive identity needs a zero projection; the other modes keep a live
    // projection and zero their heads instead.
    if (identity && config.mode == FusionMode::kAdditive)
      params_.add(p + "proj.w", Tensor<float>({C, D, 1, 1}));
    else
      params_.add(p + "proj.w", nn::he_normal<float>({C, D, 1, 1}, D, rng, 0.5));
    params_.add(p + "proj.b", Tensor<float>({C}));
    if (config.mode == FusionMode::kFilm) {
      params_.add(p + "gamma.w", identity ? Tensor<float>({C, C, 1, 1}) : nn::he_normal<float>({C, C, 1, 1}, C, rng, 0.1));
      params_.add(p + "gamma.b", Tensor<float>({C}, 1.0f));
      params_.add(p + "beta.w", identity ? Tensor<float>({C, C, 1, 1}) : nn::he_normal<float>({C, C, 1, 1}, C, rng, 0.1));
      params_.add(p + "beta.b", Tensor<float>({C}));
    } else if (config.mode == FusionMode::kMask) {
      params_.add(p + "mask.w", identity ? Tensor<float>({1, C, 1, 1}) : nn::he_normal<float>({1, C, 1, 1}, C, rng, 0.1));
      params_.add(p + "mask.b", Tensor<float>({1}, identity ? static_cast<float>(config.mask_bias) : 0.0f));
    }
  }
}

PyramidFeatures<float> augment_pyramid(const PyramidFeatures<float>& pyramid, const latentgrid::LatentGrid& grid,
                                       const FusionParams& params, const FusionConfig& config) {
  if (!config.enabled) return pyramid;
  config.validate();
  PyramidFeatures<float> out = pyramid;
  for (const auto& level : config.levels) {
    auto it = pyramid.find(level);
    require(it != pyramid.end(), Errc::kConfiguration, "pyramid has no level " + level);
    require(params.has_level(level), Errc::kConfiguration, "no fusion parameters for level " + level);
    const Var<float>& p = it->second;
    const Shape& ps = p.shape();
    require(grid.depth() == params.latent_dim(), Errc::kShape,
            "grid depth " + std::to_string(grid.depth()) + " does not match fusion latent dim " +
                std::to_string(params.latent_dim()));
    Tensor<float> aligned = latentgrid::resample_grid(grid, {ps[2], ps[3], config.align_corners});
    const auto g_tilde = Var<float>::constant(aligned.reshaped({1, grid.depth(), ps[2], ps[3]}));
    const Var<float> g = project_grid(g_tilde, params.get(level, "proj.w"), params.get(level, "proj.b"));
    switch (config.mode) {
      case FusionMode::kAdditive:
        out[level] = fuse_additive(p, g);
        break;
      case FusionMode::kFilm:
        out[level] = fuse_film(p, g, params.get(level, "gamma.w"), params.get(level, "gamma.b"),
                               params.get(level, "beta.w"), params.get(level, "beta.b"));
        break;
      case FusionMode::kMask:
        out[level] = fuse_mask(p, g, params.get(level, "mask.w"), params.get(level, "mask.b"));
        break;
    }
  }
  return out;
}

}  // namespace annodet::fusion
