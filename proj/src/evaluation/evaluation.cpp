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

#include "annodet/evaluation/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "annodet/core/error.hpp"

namespace annodet::evaluation {
namespace {

std::vector<std::size_t> by_descending_score(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require(a.width() > 0 && a.height() > 0 && b.width() > 0 && b.height() > 0, Errc::kDegenerateBox,
          "iou: box without positive area");
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::size_t MatchResult::true_positives() const { return static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true)); }
std::size_t MatchResult::false_positives() const { return is_tp.size() - true_positives(); }
std::size_t MatchResult::false_negatives() const {
  return static_cast<std::size_t>(std::count(gt_matched.begin(), gt_matched.end(), false));
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Box>& gt_boxes,
                             const std::vector<int>& gt_labels, double iou_threshold) {
  require(gt_boxes.size() == gt_labels.size(), Errc::kValidation, "one label per ground-truth box");
  MatchResult m;
  m.is_tp.assign(dets.size(), false);
  m.matched_gt.assign(dets.size(), -1);
  m.gt_matched.assign(gt_boxes.size(), false);
  std::vector<double> scores;
  for (const auto& d : dets) scores.push_back(d.score);
  for (std::size_t i : by_descending_score(scores)) {
    double best = iou_threshold;
    int hit = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      if (m.gt_matched[g] || gt_labels[g] != dets[i].class_index) continue;
      const double v = iou(dets[i].box, gt_boxes[g]);
      if (v >= best) {
        // strictly better overlap wins; first ground truth wins a tie
        if (hit < 0 || v > best) {
          best = v;
          hit = static_cast<int>(g);
        }
      }
    }
    if (hit >= 0) {
      m.is_tp[i] = true;
      m.matched_gt[i] = hit;
      m.gt_matched[hit] = true;
    }
  }
  return m;
}

double average_precision(const std::vector<double>& scores, const std::vector<bool>& is_tp, std::size_t num_gt) {
  require(scores.size() == is_tp.size(), Errc::kValidation, "one TP flag per score");
  require(num_gt > 0, Errc::kValidation, "average precision needs at least one ground truth");
  const auto order = by_descending_score(scores);
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (std::size_t i : order) {
    (is_tp[i] ? tp : fp) += 1;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / double(num_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double map50(const std::map<int, double>& per_class_ap) {
  if (per_class_ap.empty()) return 0.0;
  double s = 0;
  for (const auto& [_, ap] : per_class_ap) s += ap;
  return s / double(per_class_ap.size());
}

PrecisionRecall precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t num_gt) {
  PrecisionRecall r;
  r.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  r.recall = num_gt > 0 ? double(tp) / double(num_gt) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

RocCurve roc_auc(const std::vector<std::pair<double, bool>>& examples) {
  std::size_t pos = 0;
  for (const auto& e : examples) pos += e.second;
  const std::size_t neg = examples.size() - pos;
  require(pos > 0 && neg > 0, Errc::kUndefinedAuc,
          "ROC needs positive and negative examples (got " + std::to_string(pos) + " and " + std::to_string(neg) + ")");
  std::vector<double> scores;
  for (const auto& e : examples) scores.push_back(e.first);
  const auto order = by_descending_score(scores);
  RocCurve c;
  c.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    for (; k < order.size() && scores[order[k]] == s; ++k) (examples[order[k]].second ? tp : fp) += 1;
    const RocPoint p{fp / double(neg), tp / double(pos), s};
    c.auc += (p.fpr - c.points.back().fpr) * (p.tpr + c.points.back().tpr) / 2.0;
    c.points.push_back(p);
  }
  return c;
}

std::vector<std::pair<double, bool>> window_examples(const dataset::Scene& scene, const std::vector<Detection>& dets,
                                                     const WindowSpec& spec) {
  std::vector<std::pair<double, bool>> out;
  for (int y : dataset::window_offsets(scene.height(), spec.window, spec.stride))
    for (int x : dataset::window_offsets(scene.width(), spec.window, spec.stride)) {
      const Box w{double(x), double(y), double(x + spec.window), double(y + spec.window)};
      bool positive = false;
      for (const auto& g : scene.boxes) positive = positive || iou(w, g) >= spec.positive_iou;
      double score = 0.0;
      for (const auto& d : dets) {
        const double cx = 0.5 * (d.box.x_min + d.box.x_max), cy = 0.5 * (d.box.y_min + d.box.y_max);
        if (cx >= w.x_min && cx < w.x_max && cy >= w.y_min && cy < w.y_max) score = std::max(score, d.score);
      }
      out.emplace_back(score, positive);
    }
  return out;
}

RocCurve window_roc(const std::vector<SceneDetections>& results, const WindowSpec& spec) {
  std::vector<std::pair<double, bool>> all;
  for (const auto& r : results) {
    auto ex = window_examples(*r.scene, r.detections, spec);
    all.insert(all.end(), ex.begin(), ex.end());
  }
  return roc_auc(all);
}

MetricsReport evaluate(const std::vector<SceneDetections>& results, const EvaluationOptions& opts) {
  MetricsReport rep;
  std::map<int, std::vector<double>> cls_scores;
  std::map<int, std::vector<bool>> cls_tp;
  std::map<int, std::size_t> cls_gt;
  std::size_t tp = 0, fp = 0, n_gt = 0, n_above = 0;
  for (const auto& r : results) {
    require(r.scene != nullptr, Errc::kValidation, "evaluation result without a scene");
    const auto m = match_detections(r.detections, r.scene->boxes, r.scene->labels, opts.iou_threshold);
    for (int l : r.scene->labels) ++cls_gt[l];
    n_gt += r.scene->boxes.size();
    for (std::size_t i = 0; i < r.detections.size(); ++i) {
      const auto& d = r.detections[i];
      cls_scores[d.class_index].push_back(d.score);
      cls_tp[d.class_index].push_back(m.is_tp[i]);
      if (d.score >= opts.score_threshold) {
        ++n_above;
        (m.is_tp[i] ? tp : fp) += 1;
      }
    }
  }
  for (int c = 1; c <= opts.num_classes; ++c) {
    const std::size_t g = cls_gt.count(c) ? cls_gt[c] : 0;
    if (g == 0) {
      rep.notes.push_back("class " + std::to_string(c) + " has no ground truth and is excluded from mAP");
      continue;
    }
    rep.per_class_ap[c] = average_precision(cls_scores[c], cls_tp[c], g);
  }
  rep.map50 = map50(rep.per_class_ap);
  if (n_above == 0) rep.notes.push_back("no detections at or above the score threshold; precision set to 0");
  const auto pr = precision_recall_f1(tp, fp, n_gt);
  rep.precision = pr.precision;
  rep.recall = pr.recall;
  rep.f1 = pr.f1;
  try {
    rep.auc = window_roc(results, opts.roc).auc;
  } catch (const Error& e) {
    if (e.code() != Errc::kUndefinedAuc) throw;
    rep.auc = 0.0;
    rep.notes.push_back(std::string("AUC undefined: ") + e.what());
  }
  return rep;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [c, v] : per_class_ap) ap[std::to_string(c)] = v;
  return {{"map50", map50},   {"precision", precision}, {"recall", recall}, {"f1", f1},     {"per_class_ap", ap},
          {"auc", auc},       {"seed", seed},           {"split_id", split_id}, {"notes", notes}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.map50 = j.at("map50").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  for (const auto& [k, v] : j.at("per_class_ap").items()) r.per_class_ap[std::stoi(k)] = v.get<double>();
  r.auc = j.at("auc").get<double>();
  r.seed = j.value("seed", std::uint64_t{0});
  r.split_id = j.value("split_id", "");
  r.notes = j.value("notes", std::vector<std::string>{});
  return r;
}

PcaModel fit_pca(const Eigen::MatrixXd& x) {
  require(x.rows() >= 2, Errc::kDegeneratePca, "PCA needs at least two vectors");
  PcaModel m;
  m.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - m.mean.transpose();
  const Eigen::MatrixXd cov = (c.transpose() * c) / double(x.rows() - 1);
  require(cov.trace() > 0, Errc::kDegeneratePca, "PCA input has zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  require(es.info() == Eigen::Success, Errc::kDegeneratePca, "covariance eigendecomposition failed");
  const int D = static_cast<int>(cov.rows());
  m.axes.resize(D, D);
  m.variances.resize(D);
  for (int k = 0; k < D; ++k) {
    // eigenvalues come back ascending
    Eigen::VectorXd v = es.eigenvectors().col(D - 1 - k);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.axes.col(k) = v;
    m.variances(k) = std::max(0.0, es.eigenvalues()(D - 1 - k));
  }
  m.explained = m.variances / m.variances.sum();
  return m;
}

Eigen::MatrixXd project(const PcaModel& model, const Eigen::MatrixXd& x, int k) {
  require(x.cols() == model.dim(), Errc::kShape,
          "PCA model has dimension " + std::to_string(model.dim()) + ", input has " + std::to_string(x.cols()));
  require(k >= 1 && k <= model.dim(), Errc::kShape, "projection rank out of range");
  return (x.rowwise() - model.mean.transpose()) * model.axes.leftCols(k);
}

Tensor<double> pc1_heatmap(const PcaModel& model, const latentgrid::LatentGrid& grid) {
  const auto& v = grid.values;
  const int D = v.dim(0), H = v.dim(1), W = v.dim(2);
  require(D == model.dim(), Errc::kShape,
          "grid depth " + std::to_string(D) + " does not match PCA dimension " + std::to_string(model.dim()));
  Eigen::MatrixXd cells(H * W, D);
  for (int d = 0; d < D; ++d)
    for (int i = 0; i < H * W; ++i) cells(i, d) = v[std::size_t(d) * H * W + i];
  const Eigen::VectorXd s = project(model, cells, 1).col(0);
  Tensor<double> out({H, W});
  const double lo = s.minCoeff(), hi = s.maxCoeff();
  for (int i = 0; i < H * W; ++i) out[i] = hi > lo ? (s(i) - lo) / (hi - lo) : 0.0;
  return out;
}

Eigen::MatrixXd to_matrix(const Tensor<float>& rows) {
  require(rows.rank() == 2, Errc::kShape, "expected an [N, D] tensor");
  Eigen::MatrixXd m(rows.dim(0), rows.dim(1));
  for (int i = 0; i < rows.dim(0); ++i)
    for (int j = 0; j < rows.dim(1); ++j) m(i, j) = rows[std::size_t(i) * rows.dim(1) + j];
  return m;
}

}  // namespace annodet::evaluation
