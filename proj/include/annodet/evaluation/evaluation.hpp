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
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "annodet/detector/detector.hpp"
#include "annodet/latentgrid/latentgrid.hpp"

namespace annodet::evaluation {

using dataset::Box;
using detector::Detection;

/// Intersection over union; throws kDegenerateBox for boxes without area.
double iou(const Box& a, const Box& b);

struct MatchResult {
  std::vector<bool> is_tp;        // per detection, input order
  std::vector<int> matched_gt;    // -1 when unmatched
  std::vector<bool> gt_matched;   // per ground truth
  std::size_t true_positives() const;
  std::size_t false_positives() const;
  std::size_t false_negatives() const;
};

/// Greedy one-to-one matching by descending score (ties keep input order).
/// A detection only matches a ground truth of its own class.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gt_boxes,
                             const std::vector<int>& gt_labels, double iou_threshold = 0.5);

/// All-point interpolated AP from scored TP/FP flags pooled over scenes.
/// `num_gt` must be positive.
double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_tp, std::size_t num_gt);

/// Unweighted mean over the supplied classes.
double map50(const std::map<int, double>& per_class_ap);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PrecisionRecall precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t num_gt);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0,0) to (1,1)
  double auc = 0.0;
};

/// ROC over every distinct score; throws kUndefinedAuc unless both labels occur.
RocCurve roc_auc(const std::vector<std::pair<double, bool>>& examples);

struct WindowSpec {
  int window = 24;
  int stride = 8;
  double positive_iou = 0.5;
};

/// Sliding-window examples: positive when some ground truth has IoU >= positive_iou
/// with the window; scored by the highest confidence among detections centred inside it.
std::vector<std::pair<double, bool>> window_examples(const dataset::Scene& scene, const std::vector<Detection>& dets,
                                                     const WindowSpec& spec);

struct MetricsReport {
  double map50 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::map<int, double> per_class_ap;
  double auc = 0.0;
  std::uint64_t seed = 0;
  std::string split_id;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

struct EvaluationOptions {
  int num_classes = 3;
  double iou_threshold = 0.5;
  double score_threshold = 0.5;
  WindowSpec roc;
};

struct SceneDetections {
  const dataset::Scene* scene = nullptr;
  std::vector<Detection> detections;
};

/// mAP50 over all detections, P/R/F1 over those at or above the score threshold,
/// and window-level AUC. Classes without ground truth are left out with a note.
MetricsReport evaluate(const std::vector<SceneDetections>& results, const EvaluationOptions& opts);

/// ROC curve for the same window construction used by `evaluate`.
RocCurve window_roc(const std::vector<SceneDetections>& results, const WindowSpec& spec);

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd axes;           // D x D, column k is the k-th principal axis
  Eigen::VectorXd variances;      // non-increasing
  Eigen::VectorXd explained;      // variance shares, sum to 1

  int dim() const { return static_cast<int>(mean.size()); }
};

/// Rows of `x` are observations. Axis signs are fixed so the largest-magnitude
/// entry of each axis is positive.
PcaModel fit_pca(const Eigen::MatrixXd& x);

/// First k principal coordinates of each row.
Eigen::MatrixXd project(const PcaModel& model, const Eigen::MatrixXd& x, int k);

/// PC1 score per grid cell, min-max normalized to [0,1] (all zeros if flat).
Tensor<double> pc1_heatmap(const PcaModel& model, const latentgrid::LatentGrid& grid);

/// Row-major [N, D] float tensor as a double matrix.
Eigen::MatrixXd to_matrix(const Tensor<float>& rows);

}  // namespace annodet::evaluation
