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
#include <cmath>

#include "annodet/core/error.hpp"
#include "annodet/embedding/embedding.hpp"

namespace annodet::embedding {

void AnnotationWeights::validate() const {
  require(w_class >= 0 && w_area >= 0 && w_square >= 0, Errc::kInvalidWeights,
          "annotation weights must be non-negative");
  require(w_class + w_area + w_square > 0, Errc::kInvalidWeights, "annotation weights must not all be zero");
}

double annotation_distance(const AnnotationVector& a, const AnnotationVector& b, const AnnotationWeights& w) {
  w.validate();
  return w.w_class * (a.class_index != b.class_index ? 1.0 : 0.0) +
         w.w_area * std::abs(a.area_norm - b.area_norm) + w.w_square * std::abs(a.squareness - b.squareness);
}

LossValue dtl_loss(double d_ap, double d_an, double margin) {
  require(margin >= 0, Errc::kInvalidConfig, "DTL margin must be non-negative");
  const double v = d_ap - d_an + margin;
  if (v <= 0) return {};
  return {v, 1.0, -1.0};
}

LossValue matl_loss(double d_ap, double d_an, double ann_ap, double ann_an, double margin_scale) {
  require(ann_an > ann_ap, Errc::kTripletOrder, "MATL needs the negative farther than the positive in annotation space");
  require(margin_scale > 0, Errc::kInvalidConfig, "margin_scale must be positive");
  const double v = d_ap - d_an + margin_scale * (ann_an - ann_ap);
  if (v <= 0) return {};
  return {v, 1.0, -1.0};
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "dtl") return LossKind::kDtl;
  if (s == "matl") return LossKind::kMatl;
  fail(Errc::kInvalidConfig, "unknown loss '" + s + "' (expected dtl or matl)");
}

MiningMode parse_mining_mode(const std::string& s) {
  if (s == "all") return MiningMode::kAll;
  if (s == "semi-hard" || s == "semihard") return MiningMode::kSemiHard;
  fail(Errc::kInvalidConfig, "unknown mining mode '" + s + "' (expected all or semi-hard)");
}

double euclidean(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<Triplet> mine_triplets(const Tensor<float>& embeddings,
                                   const std::vector<AnnotationVector>& annotations,
                                   const AnnotationWeights& w, MiningMode mode, const MarginRule& rule) {
  w.validate();
  const int n = static_cast<int>(annotations.size());
  require(embeddings.rank() == 2 && embeddings.dim(0) == n, Errc::kShape,
          "embeddings must be [N,D] aligned with the annotations");
  std::vector<Triplet> out;
  if (n < 3) return out;
  const int D = embeddings.dim(1);
  auto row = [&](int i) { return std::span<const float>(embeddings.data() + std::size_t(i) * D, D); };
  std::vector<double> ann(std::size_t(n) * n), emb(std::size_t(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      ann[i * n + j] = annotation_distance(annotations[i], annotations[j], w);
      emb[i * n + j] = euclidean(row(i), row(j));
    }
  for (int a = 0; a < n; ++a)
    for (int p = 0; p < n; ++p) {
      if (p == a) continue;
      for (int q = 0; q < n; ++q) {
        if (q == a || q == p) continue;
        const double dap = ann[a * n + p], dan = ann[a * n + q];
        if (!(dap < dan)) continue;
        if (mode == MiningMode::kSemiHard) {
          const double eap = emb[a * n + p], ean = emb[a * n + q];
          if (!(eap < ean && ean < eap + rule.margin(dap, dan))) continue;
        }
        out.push_back({a, p, q, dap, dan});
      }
    }
  return out;
}

template <typename T>
double triplet_objective(const Tensor<T>& embeddings, const std::vector<Triplet>& triplets,
                         const TripletObjective& obj, Tensor<T>* grad) {
  require(embeddings.rank() == 2, Errc::kShape, "embeddings must be [N, D]");
  const int D = embeddings.dim(1);
  if (grad) *grad = Tensor<T>(embeddings.shape());
  if (triplets.empty()) return 0.0;
  const T* E = embeddings.data();
  auto dist = [&](int i, int j) {
    double s = 0;
    for (int k = 0; k < D; ++k) {
      const double d = double(E[std::size_t(i) * D + k]) - double(E[std::size_t(j) * D + k]);
      s += d * d;
    }
    return std::max(std::sqrt(s), 1e-12);
  };
  const double inv = 1.0 / double(triplets.size());
  double loss = 0;
  for (const auto& t : triplets) {
    const double dap = dist(t.anchor, t.positive), dan = dist(t.anchor, t.negative);
    const LossValue lv = obj.kind == LossKind::kDtl ? dtl_loss(dap, dan, obj.dtl_margin)
                                                    : matl_loss(dap, dan, t.ann_ap, t.ann_an, obj.margin_scale);
    if (lv.value <= 0) continue;
    loss += lv.value * inv;
    if (!grad) continue;
    T* g = grad->data();
    for (int k = 0; k < D; ++k) {
      const double ea = E[std::size_t(t.anchor) * D + k], ep = E[std::size_t(t.positive) * D + k],
                   en = E[std::size_t(t.negative) * D + k];
      const double gap = lv.d_ap * (ea - ep) / dap * inv;
      const double gan = lv.d_an * (ea - en) / dan * inv;
      g[std::size_t(t.anchor) * D + k] += static_cast<T>(gap + gan);
      g[std::size_t(t.positive) * D + k] -= static_cast<T>(gap);
      g[std::size_t(t.negative) * D + k] -= static_cast<T>(gan);
    }
  }
  return loss;
}

template double triplet_objective<float>(const Tensor<float>&, const std::vector<Triplet>&, const TripletObjective&,
                                         Tensor<float>*);
template double triplet_objective<double>(const Tensor<double>&, const std::vector<Triplet>&, const TripletObjective&,
                                          Tensor<double>*);

}  // namespace annodet::embedding
