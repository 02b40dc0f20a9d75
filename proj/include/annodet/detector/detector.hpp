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
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annodet/core/container.hpp"
#include "annodet/detector/geometry.hpp"
#include "annodet/detector/roi_align.hpp"
#include "annodet/fusion/fusion.hpp"

namespace annodet::detector {

using fusion::PyramidFeatures;
using nn::Var;

struct Proposal {
  Box box;
  double objectness = 0.0;
};

struct Detection {
  Box box;
  int class_index = 1;
  double score = 0.0;
};

struct DetectorConfig {
  int num_classes = 3;  // foreground classes; index 0 is background
  int channels = 64;
  int stem_width = 16;
  std::vector<int> stage_widths{32, 64, 128, 128};
  AnchorSpec anchors;

  // RPN
  int rpn_pre_nms_top_n = 300;
  int rpn_post_nms_top_n_train = 200;
  int rpn_post_nms_top_n_test = 100;
  double rpn_nms_iou = 0.7;
  double rpn_fg_iou = 0.7;
  double rpn_bg_iou = 0.3;
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  double rpn_smooth_l1_beta = 1.0 / 9.0;

  // Box head
  int roi_batch = 64;
  double roi_fg_fraction = 0.25;
  double roi_fg_iou = 0.5;
  double roi_bg_iou = 0.3;
  RoiAlignOptions roi_align;
  LevelRule level_rule;
  int head_hidden = 256;
  double smooth_l1_beta = 1.0;

  // Inference
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 100;

  // Training
  int epochs = 20;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int warmup_steps = 100;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

/// Scalar detector losses from one forward pass.
struct LossBreakdown {
  Var<float> total;
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;
  double classification = 0.0;
  double box_regression = 0.0;
};

/// Scene-aligned latent grids plus the fusion settings that consume them.
struct FusionSetup {
  fusion::FusionConfig config;
  int latent_dim = 64;
  std::uint64_t encoder_checksum = 0;
};

/// Small residual backbone + FPN, RPN, RoIAlign and a two-layer box head.
class Detector {
 public:
  Detector(const DetectorConfig& config, std::optional<FusionSetup> fusion = std::nullopt);

  const DetectorConfig& config() const { return config_; }
  bool fused() const { return fusion_.has_value() && fusion_->config.enabled; }
  const std::optional<FusionSetup>& fusion_setup() const { return fusion_; }

  /// P2..P5 at strides 4..32; image must be 3xHxW with H, W divisible by 32.
  PyramidFeatures<float> backbone_fpn(const Tensor<float>& image) const;
  /// Backbone pyramid with the latent grid fused in (identity when fusion is off).
  PyramidFeatures<float> features(const Tensor<float>& image, const latentgrid::LatentGrid* grid) const;

  AnchorSet anchors_for(const PyramidFeatures<float>& pyramid) const;

  /// Top-k proposals after per-level scoring, decoding, clipping and NMS.
  std::vector<Proposal> rpn_forward(const PyramidFeatures<float>& pyramid, const AnchorSet& anchors, int k,
                                    double image_w, double image_h) const;

  /// Pooled box-head inputs; boxes are routed to levels by area.
  Var<float> pool(const PyramidFeatures<float>& pyramid, const std::vector<Box>& boxes) const;
  /// (class logits [R, K+1], box deltas [R, 4(K+1)]).
  std::pair<Var<float>, Var<float>> heads(const Var<float>& pooled) const;

  LossBreakdown losses(const dataset::Scene& scene, const latentgrid::LatentGrid* grid, std::mt19937_64& rng) const;

  std::vector<Detection> infer(const dataset::Scene& scene, const latentgrid::LatentGrid* grid, double score_threshold,
                               double nms_iou) const;

  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  fusion::FusionParams& fusion_params() { return fusion_params_; }
  const fusion::FusionParams& fusion_params() const { return fusion_params_; }

  Container to_container() const;
  static Detector from_container(const Container& c);
  void save(const std::filesystem::path& path) const;
  static Detector load(const std::filesystem::path& path);

 private:
  Var<float> conv(const Var<float>& x, const std::string& name, int stride, int pad) const;

  DetectorConfig config_;
  std::optional<FusionSetup> fusion_;
  nn::ParameterSet<float> params_;
  fusion::FusionParams fusion_params_;
  BoxCoder rpn_coder_;
  BoxCoder head_coder_{{10.0, 10.0, 5.0, 5.0}};
};

using GridLookup = std::map<std::string, latentgrid::LatentGrid>;

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double rpn_objectness = 0.0;
  double rpn_box = 0.0;
  double classification = 0.0;
  double box_regression = 0.0;
};

struct DetectorTrainResult {
  Detector detector;
  std::vector<EpochLog> log;
};

/// Trains on `scenes` (training split). When `fusion` is set every scene needs
/// a grid in `grids` computed by the same frozen encoder.
DetectorTrainResult train_detector(const std::vector<dataset::Scene>& scenes, const DetectorConfig& config,
                                   const std::optional<FusionSetup>& fusion = std::nullopt,
                                   const GridLookup* grids = nullptr,
                                   const std::function<void(const EpochLog&)>& on_epoch = {});

/// Grid for `scene`, or nullptr when the detector is unfused. Throws
/// kDatasetConsistency when a fused detector has no matching grid.
const latentgrid::LatentGrid* grid_for(const Detector& det, const dataset::Scene& scene, const GridLookup* grids);

nlohmann::json detections_to_json(const std::string& scene_id, const std::vector<Detection>& dets);

}  // namespace annodet::detector
