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

#include "annodet/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "annodet/core/error.hpp"
#include "annodet/nn/ops.hpp"

namespace annodet::detector {
namespace {

constexpr std::uint64_t kFusionSeedSalt = 0x9e3779b97f4a7c15ULL;
const std::vector<double> kLevelStrides{4, 8, 16, 32};

struct RpnLevelOutput {
  Var<float> cls;  // [1, A, H, W]
  Var<float> reg;  // [1, 4A, H, W]
};

std::vector<Var<float>> ordered_levels(const PyramidFeatures<float>& pyramid) {
  std::vector<Var<float>> out;
  for (const auto& id : fusion::all_levels()) {
    auto it = pyramid.find(id);
    require(it != pyramid.end(), Errc::kShape, "pyramid is missing level " + id);
    out.push_back(it->second);
  }
  return out;
}

// Indices of the top-n entries by value, ties to the lower index.
std::vector<std::size_t> top_n(const std::vector<double>& v, std::size_t n) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  n = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  idx.resize(n);
  return idx;
}

template <typename Rng>
std::vector<std::size_t> sample(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
  if (pool.size() > n) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
  }
  return pool;
}

}  // namespace

nlohmann::json DetectorConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"channels", channels},
          {"stem_width", stem_width},
          {"stage_widths", stage_widths},
          {"anchor_sizes", anchors.sizes},
          {"anchor_ratios", anchors.ratios},
          {"anchor_scales", anchors.scales},
          {"rpn_pre_nms_top_n", rpn_pre_nms_top_n},
          {"rpn_post_nms_top_n_train", rpn_post_nms_top_n_train},
          {"rpn_post_nms_top_n_test", rpn_post_nms_top_n_test},
          {"rpn_nms_iou", rpn_nms_iou},
          {"rpn_fg_iou", rpn_fg_iou},
          {"rpn_bg_iou", rpn_bg_iou},
          {"rpn_batch", rpn_batch},
          {"rpn_positive_fraction", rpn_positive_fraction},
          {"rpn_smooth_l1_beta", rpn_smooth_l1_beta},
          {"roi_batch", roi_batch},
          {"roi_fg_fraction", roi_fg_fraction},
          {"roi_fg_iou", roi_fg_iou},
          {"roi_bg_iou", roi_bg_iou},
          {"roi_output_size", roi_align.output_size},
          {"roi_sampling_ratio", roi_align.sampling_ratio},
          {"roi_canonical_size", level_rule.canonical_size},
          {"roi_canonical_level", level_rule.canonical_level},
          {"head_hidden", head_hidden},
          {"smooth_l1_beta", smooth_l1_beta},
          {"score_threshold", score_threshold},
          {"nms_iou", nms_iou},
          {"max_detections", max_detections},
          {"epochs", epochs},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_steps", warmup_steps},
          {"clip_norm", clip_norm},
          {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.channels = j.value("channels", c.channels);
  c.stem_width = j.value("stem_width", c.stem_width);
  c.stage_widths = j.value("stage_widths", c.stage_widths);
  c.anchors.sizes = j.value("anchor_sizes", c.anchors.sizes);
  c.anchors.ratios = j.value("anchor_ratios", c.anchors.ratios);
  c.anchors.scales = j.value("anchor_scales", c.anchors.scales);
  c.rpn_pre_nms_top_n = j.value("rpn_pre_nms_top_n", c.rpn_pre_nms_top_n);
  c.rpn_post_nms_top_n_train = j.value("rpn_post_nms_top_n_train", c.rpn_post_nms_top_n_train);
  c.rpn_post_nms_top_n_test = j.value("rpn_post_nms_top_n_test", c.rpn_post_nms_top_n_test);
  c.rpn_nms_iou = j.value("rpn_nms_iou", c.rpn_nms_iou);
  c.rpn_fg_iou = j.value("rpn_fg_iou", c.rpn_fg_iou);
  c.rpn_bg_iou = j.value("rpn_bg_iou", c.rpn_bg_iou);
  c.rpn_batch = j.value("rpn_batch", c.rpn_batch);
  c.rpn_positive_fraction = j.value("rpn_positive_fraction", c.rpn_positive_fraction);
  c.rpn_smooth_l1_beta = j.value("rpn_smooth_l1_beta", c.rpn_smooth_l1_beta);
  c.roi_batch = j.value("roi_batch", c.roi_batch);
  c.roi_fg_fraction = j.value("roi_fg_fraction", c.roi_fg_fraction);
  c.roi_fg_iou = j.value("roi_fg_iou", c.roi_fg_iou);
  c.roi_bg_iou = j.value("roi_bg_iou", c.roi_bg_iou);
  c.roi_align.output_size = j.value("roi_output_size", c.roi_align.output_size);
  c.roi_align.sampling_ratio = j.value("roi_sampling_ratio", c.roi_align.sampling_ratio);
  c.level_rule.canonical_size = j.value("roi_canonical_size", c.level_rule.canonical_size);
  c.level_rule.canonical_level = j.value("roi_canonical_level", c.level_rule.canonical_level);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.smooth_l1_beta = j.value("smooth_l1_beta", c.smooth_l1_beta);
  c.score_threshold = j.value("score_threshold", c.score_threshold);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.max_detections = j.value("max_detections", c.max_detections);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  return c;
}

Detector::Detector(const DetectorConfig& config, std::optional<FusionSetup> fusion)
    : config_(config), fusion_(std::move(fusion)) {
  require(config.num_classes >= 1, Errc::kInvalidConfig, "num_classes must be >= 1");
  require(config.stage_widths.size() == 4, Errc::kInvalidConfig, "the backbone has exactly four stages");
  require(config.channels >= 1, Errc::kInvalidConfig, "channels must be >= 1");
  std::mt19937_64 rng(config.seed);
  const int C = config.channels;
  auto conv_param = [&](const std::string& name, int cout, int cin, int k, double gain = 1.0) {
    params_.add(name + ".w", nn::he_normal<float>({cout, cin, k, k}, cin * k * k, rng, gain));
    params_.add(name + ".b", Tensor<float>({cout}));
  };
  conv_param("stem", config.stem_width, 3, 3);
  int cin = config.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int w = config.stage_widths[s];
    const std::string p = "s" + std::to_string(s);
    conv_param(p + ".down", w, cin, 3);
    conv_param(p + ".res1", w, w, 3);
    conv_param(p + ".res2", w, w, 3, 0.1);
    cin = w;
  }
  for (int s = 0; s < 4; ++s) {
    conv_param("fpn.lat" + std::to_string(s), C, config.stage_widths[s], 1);
    conv_param("fpn.out" + std::to_string(s), C, C, 3, 0.5);
  }
  const int A = config.anchors.per_cell();
  conv_param("rpn.conv", C, C, 3);
  params_.add("rpn.cls.w", nn::normal_init<float>({A, C, 1, 1}, 0.01, rng));
  params_.add("rpn.cls.b", Tensor<float>({A}));
  params_.add("rpn.reg.w", nn::normal_init<float>({4 * A, C, 1, 1}, 0.01, rng));
  params_.add("rpn.reg.b", Tensor<float>({4 * A}));
  const int S = config.roi_align.output_size, F = C * S * S, Hd = config.head_hidden;
  const int K1 = config.num_classes + 1;
  params_.add("head.fc1.w", nn::he_normal<float>({Hd, F}, F, rng));
  params_.add("head.fc1.b", Tensor<float>({Hd}));
  params_.add("head.fc2.w", nn::he_normal<float>({Hd, Hd}, Hd, rng));
  params_.add("head.fc2.b", Tensor<float>({Hd}));
  params_.add("head.cls.w", nn::normal_init<float>({K1, Hd}, 0.01, rng));
  params_.add("head.cls.b", Tensor<float>({K1}));
  params_.add("head.reg.w", nn::normal_init<float>({4 * K1, Hd}, 0.001, rng));
  params_.add("head.reg.b", Tensor<float>({4 * K1}));

  if (fusion_ && fusion_->config.enabled) {
    fusion_->config.validate();
    fusion_params_ = fusion::FusionParams(fusion_->latent_dim, C, fusion_->config, config.seed ^ kFusionSeedSalt);
  }
}

Var<float> Detector::conv(const Var<float>& x, const std::string& name, int stride, int pad) const {
  return nn::conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"), stride, pad);
}

PyramidFeatures<float> Detector::backbone_fpn(const Tensor<float>& image) const {
  require(image.rank() == 3 && image.dim(0) == 3, Errc::kShape, "detector expects a 3xHxW image");
  const int H = image.dim(1), W = image.dim(2);
  require(H % 32 == 0 && W % 32 == 0 && H > 0 && W > 0, Errc::kUnsupportedGeometry,
          "image " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by the coarsest stride 32");
  Tensor<float> x0 = image.reshaped({1, 3, H, W});
  for (auto& v : x0.storage()) v = (v - 0.5f) * 4.0f;
  Var<float> x = nn::relu(conv(Var<float>::constant(std::move(x0)), "stem", 2, 1));
  std::vector<Var<float>> stages;
  for (int s = 0; s < 4; ++s) {
    const std::string p = "s" + std::to_string(s);
    x = nn::relu(conv(x, p + ".down", 2, 1));
    Var<float> r = conv(nn::relu(conv(x, p + ".res1", 1, 1)), p + ".res2", 1, 1);
    x = nn::relu(nn::add(x, r));
    stages.push_back(x);
  }
  std::vector<Var<float>> merged(4);
  merged[3] = conv(stages[3], "fpn.lat3", 1, 0);
  for (int s = 2; s >= 0; --s) {
    const Var<float> lat = conv(stages[s], "fpn.lat" + std::to_string(s), 1, 0);
    merged[s] = nn::add(lat, nn::upsample_nearest(merged[s + 1], lat.shape()[2], lat.shape()[3]));
  }
  PyramidFeatures<float> out;
  for (int s = 0; s < 4; ++s) out[fusion::all_levels()[s]] = conv(merged[s], "fpn.out" + std::to_string(s), 1, 1);
  return out;
}

PyramidFeatures<float> Detector::features(const Tensor<float>& image, const latentgrid::LatentGrid* grid) const {
  PyramidFeatures<float> pyr = backbone_fpn(image);
  if (!fused()) return pyr;
  require(grid != nullptr, Errc::kDatasetConsistency, "fused detector needs a latent grid");
  return fusion::augment_pyramid(pyr, *grid, fusion_params_, fusion_->config);
}

AnchorSet Detector::anchors_for(const PyramidFeatures<float>& pyramid) const {
  std::vector<std::array<int, 2>> shapes;
  for (const auto& v : ordered_levels(pyramid)) shapes.push_back({v.shape()[2], v.shape()[3]});
  return generate_anchors(shapes, kLevelStrides, config_.anchors);
}

namespace {

std::vector<RpnLevelOutput> run_rpn_head(const Detector& det, const PyramidFeatures<float>& pyramid) {
  const auto& P = det.params();
  std::vector<RpnLevelOutput> out;
  for (const auto& f : ordered_levels(pyramid)) {
    const Var<float> t = nn::relu(nn::conv2d(f, P.get("rpn.conv.w"), P.get("rpn.conv.b"), 1, 1));
    out.push_back({nn::conv2d(t, P.get("rpn.cls.w"), P.get("rpn.cls.b"), 1, 0),
                   nn::conv2d(t, P.get("rpn.reg.w"), P.get("rpn.reg.b"), 1, 0)});
  }
  return out;
}

std::vector<Proposal> proposals_from(const std::vector<RpnLevelOutput>& rpn, const AnchorSet& anchors,
                                     const BoxCoder& coder, const DetectorConfig& cfg, int k, double W, double H) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (std::size_t l = 0; l < anchors.levels.size(); ++l) {
    const auto& la = anchors.levels[l];
    const int A = la.per_cell, HW = la.height * la.width;
    const auto& cls = rpn[l].cls.value();
    const auto& reg = rpn[l].reg.value();
    std::vector<double> logits(la.boxes.size());
    for (int cell = 0; cell < HW; ++cell)
      for (int a = 0; a < A; ++a) logits[std::size_t(cell) * A + a] = cls[std::size_t(a) * HW + cell];
    for (std::size_t i : top_n(logits, static_cast<std::size_t>(cfg.rpn_pre_nms_top_n))) {
      const int cell = static_cast<int>(i) / A, a = static_cast<int>(i) % A;
      std::array<double, 4> d{};
      for (int c = 0; c < 4; ++c) d[c] = reg[std::size_t(a * 4 + c) * HW + cell];
      const Box b = clip_box(coder.decode(d, la.boxes[i]), W, H);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      boxes.push_back(b);
      scores.push_back(nn::sigmoid_scalar(logits[i]));
    }
  }
  std::vector<Proposal> out;
  for (std::size_t i : nms(boxes, scores, cfg.rpn_nms_iou)) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back({boxes[i], scores[i]});
  }
  return out;
}

}  // namespace

std::vector<Proposal> Detector::rpn_forward(const PyramidFeatures<float>& pyramid, const AnchorSet& anchors, int k,
                                            double image_w, double image_h) const {
  require(k > 0, Errc::kInvalidConfig, "proposal count k must be positive");
  nn::NoGradGuard no_grad;
  return proposals_from(run_rpn_head(*this, pyramid), anchors, rpn_coder_, config_, k, image_w, image_h);
}

Var<float> Detector::pool(const PyramidFeatures<float>& pyramid, const std::vector<Box>& boxes) const {
  std::vector<int> level_of(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i)
    level_of[i] = assign_level(boxes[i], config_.level_rule) - config_.level_rule.min_level;
  std::vector<double> scales;
  for (double s : kLevelStrides) scales.push_back(1.0 / s);
  return roi_align(ordered_levels(pyramid), scales, boxes, level_of, config_.roi_align);
}

std::pair<Var<float>, Var<float>> Detector::heads(const Var<float>& pooled) const {
  const Shape& s = pooled.shape();
  const Var<float> flat = nn::reshape(pooled, {s[0], s[1] * s[2] * s[3]});
  const auto& P = params_;
  Var<float> h = nn::relu(nn::linear(flat, P.get("head.fc1.w"), P.get("head.fc1.b")));
  h = nn::relu(nn::linear(h, P.get("head.fc2.w"), P.get("head.fc2.b")));
  return {nn::linear(h, P.get("head.cls.w"), P.get("head.cls.b")),
          nn::linear(h, P.get("head.reg.w"), P.get("head.reg.b"))};
}

LossBreakdown Detector::losses(const dataset::Scene& scene, const latentgrid::LatentGrid* grid,
                               std::mt19937_64& rng) const {
  const double W = scene.width(), H = scene.height();
  const PyramidFeatures<float> pyr = features(scene.image, grid);
  const auto rpn = run_rpn_head(*this, pyr);
  const AnchorSet anchors = anchors_for(pyr);
  const auto& gts = scene.boxes;

  // RPN targets over the concatenated anchors.
  std::vector<const Box*> all;
  std::vector<std::pair<int, int>> where;  // (level, index within level)
  for (std::size_t l = 0; l < anchors.levels.size(); ++l)
    for (std::size_t i = 0; i < anchors.levels[l].boxes.size(); ++i) {
      all.push_back(&anchors.levels[l].boxes[i]);
      where.emplace_back(static_cast<int>(l), static_cast<int>(i));
    }
  const std::size_t N = all.size();
  std::vector<int> label(N, 0), match(N, -1);
  std::vector<double> best_for_gt(gts.size(), 0.0);
  std::vector<double> iou_cache(N * gts.size());
  for (std::size_t a = 0; a < N; ++a) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = box_iou(*all[a], gts[g]);
      iou_cache[a * gts.size() + g] = v;
      if (v > best) {
        best = v;
        match[a] = static_cast<int>(g);
      }
      best_for_gt[g] = std::max(best_for_gt[g], v);
    }
    label[a] = best >= config_.rpn_fg_iou ? 1 : (best < config_.rpn_bg_iou ? 0 : -1);
  }
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (best_for_gt[g] > 0 && iou_cache[a * gts.size() + g] == best_for_gt[g]) {
        label[a] = 1;
        match[a] = static_cast<int>(g);
      }
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < N; ++a) {
    if (label[a] == 1) pos.push_back(a);
    else if (label[a] == 0) neg.push_back(a);
  }
  const std::size_t max_pos = static_cast<std::size_t>(config_.rpn_batch * config_.rpn_positive_fraction);
  pos = sample(std::move(pos), max_pos, rng);
  neg = sample(std::move(neg), static_cast<std::size_t>(config_.rpn_batch) - pos.size(), rng);
  const float rpn_norm = static_cast<float>(std::max<std::size_t>(pos.size() + neg.size(), 1));

  LossBreakdown out;
  Var<float> rpn_obj, rpn_box;
  for (std::size_t l = 0; l < anchors.levels.size(); ++l) {
    const auto& la = anchors.levels[l];
    const int A = la.per_cell, HW = la.height * la.width;
    std::vector<std::size_t> cls_idx, reg_idx;
    std::vector<float> targets, reg_targets;
    auto add_cls = [&](std::size_t a, float t) {
      const int i = where[a].second, cell = i / A, k = i % A;
      cls_idx.push_back(std::size_t(k) * HW + cell);
      targets.push_back(t);
    };
    for (std::size_t a : pos)
      if (where[a].first == static_cast<int>(l)) {
        add_cls(a, 1.0f);
        const int i = where[a].second, cell = i / A, k = i % A;
        const auto d = rpn_coder_.encode(gts[match[a]], *all[a]);
        for (int c = 0; c < 4; ++c) {
          reg_idx.push_back(std::size_t(k * 4 + c) * HW + cell);
          reg_targets.push_back(static_cast<float>(d[c]));
        }
      }
    for (std::size_t a : neg)
      if (where[a].first == static_cast<int>(l)) add_cls(a, 0.0f);
    if (!cls_idx.empty()) {
      const Tensor<float> t({static_cast<int>(targets.size())}, targets);
      const auto term = nn::bce_with_logits(nn::gather(rpn[l].cls, std::move(cls_idx)), t, rpn_norm);
      rpn_obj = rpn_obj.valid() ? nn::add(rpn_obj, term) : term;
    }
    if (!reg_idx.empty()) {
      const Tensor<float> t({static_cast<int>(reg_targets.size())}, reg_targets);
      const auto term = nn::smooth_l1(nn::gather(rpn[l].reg, std::move(reg_idx)), t,
                                      static_cast<float>(config_.rpn_smooth_l1_beta), rpn_norm);
      rpn_box = rpn_box.valid() ? nn::add(rpn_box, term) : term;
    }
  }

  // Box head on sampled proposals plus ground truth.
  std::vector<Proposal> props;
  {
    nn::NoGradGuard no_grad;
    props = proposals_from(rpn, anchors, rpn_coder_, config_, config_.rpn_post_nms_top_n_train, W, H);
  }
  std::vector<Box> cand;
  for (const auto& p : props) cand.push_back(p.box);
  cand.insert(cand.end(), gts.begin(), gts.end());
  std::vector<std::size_t> fg, bg;
  std::vector<int> cand_match(cand.size(), -1);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = box_iou(cand[i], gts[g]);
      if (v > best) {
        best = v;
        cand_match[i] = static_cast<int>(g);
      }
    }
    if (best >= config_.roi_fg_iou) fg.push_back(i);
    else if (best < config_.roi_bg_iou) bg.push_back(i);
  }
  fg = sample(std::move(fg), static_cast<std::size_t>(config_.roi_batch * config_.roi_fg_fraction), rng);
  bg = sample(std::move(bg), static_cast<std::size_t>(config_.roi_batch) - fg.size(), rng);

  std::vector<Box> rois;
  std::vector<int> labels;
  std::vector<std::size_t> reg_idx;
  std::vector<float> reg_targets;
  const int K1 = config_.num_classes + 1;
  for (std::size_t i : fg) {
    const int g = cand_match[i];
    const std::size_t r = rois.size();
    rois.push_back(cand[i]);
    labels.push_back(scene.labels[g]);
    const auto d = head_coder_.encode(gts[g], cand[i]);
    for (int c = 0; c < 4; ++c) {
      reg_idx.push_back(r * 4 * K1 + std::size_t(scene.labels[g]) * 4 + c);
      reg_targets.push_back(static_cast<float>(d[c]));
    }
  }
  for (std::size_t i : bg) {
    rois.push_back(cand[i]);
    labels.push_back(0);
  }

  Var<float> cls_loss, box_loss;
  if (!rois.empty()) {
    const auto [logits, deltas] = heads(pool(pyr, rois));
    cls_loss = nn::softmax_cross_entropy(logits, labels);
    if (!reg_idx.empty()) {
      const Tensor<float> t({static_cast<int>(reg_targets.size())}, reg_targets);
      box_loss = nn::smooth_l1(nn::gather(deltas, std::move(reg_idx)), t, static_cast<float>(config_.smooth_l1_beta),
                               static_cast<float>(rois.size()));
    }
  }

  Var<float> total;
  for (const auto* term : {&rpn_obj, &rpn_box, &cls_loss, &box_loss}) {
    if (!term->valid()) continue;
    total = total.valid() ? nn::add(total, *term) : *term;
  }
  if (!total.valid()) total = Var<float>::constant(Tensor<float>({1}));
  out.total = total;
  out.rpn_objectness = rpn_obj.valid() ? rpn_obj.value()[0] : 0.0;
  out.rpn_box = rpn_box.valid() ? rpn_box.value()[0] : 0.0;
  out.classification = cls_loss.valid() ? cls_loss.value()[0] : 0.0;
  out.box_regression = box_loss.valid() ? box_loss.value()[0] : 0.0;
  return out;
}

std::vector<Detection> Detector::infer(const dataset::Scene& scene, const latentgrid::LatentGrid* grid,
                                       double score_threshold, double nms_iou) const {
  nn::NoGradGuard no_grad;
  const double W = scene.width(), H = scene.height();
  const PyramidFeatures<float> pyr = features(scene.image, grid);
  const auto props = rpn_forward(pyr, anchors_for(pyr), config_.rpn_post_nms_top_n_test, W, H);
  if (props.empty()) return {};
  std::vector<Box> rois;
  for (const auto& p : props) rois.push_back(p.box);
  const auto [logits, deltas] = heads(pool(pyr, rois));
  const int K1 = config_.num_classes + 1;
  const auto& lg = logits.value();
  const auto& dl = deltas.value();

  std::vector<Detection> out;
  for (int c = 1; c < K1; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const float* row = lg.data() + r * K1;
      const double mx = *std::max_element(row, row + K1);
      double z = 0;
      for (int k = 0; k < K1; ++k) z += std::exp(double(row[k]) - mx);
      const double p = std::exp(double(row[c]) - mx) / z;
      if (p < score_threshold) continue;
      std::array<double, 4> d{};
      for (int k = 0; k < 4; ++k) d[k] = dl[r * 4 * K1 + std::size_t(c) * 4 + k];
      const Box b = clip_box(head_coder_.decode(d, rois[r]), W, H);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      boxes.push_back(b);
      scores.push_back(p);
    }
    for (std::size_t i : nms(boxes, scores, nms_iou)) out.push_back({boxes[i], c, scores[i]});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(out.size()) > config_.max_detections) out.resize(static_cast<std::size_t>(config_.max_detections));
  return out;
}

Container Detector::to_container() const {
  Container c;
  c.meta["kind"] = "detector";
  c.meta["config"] = config_.to_json();
  if (fused()) {
    const auto& f = *fusion_;
    c.meta["fusion"] = {{"mode", fusion::to_string(f.config.mode)},
                        {"levels", f.config.levels},
                        {"init_policy", fusion::to_string(f.config.init)},
                        {"align_corners", f.config.align_corners},
                        {"mask_bias", f.config.mask_bias},
                        {"latent_dim", f.latent_dim},
                        {"encoder_checksum", f.encoder_checksum}};
  } else {
    c.meta["fusion"] = nullptr;
  }
  for (const auto& [name, v] : params_.items()) c.tensors.push_back({name, v.value()});
  for (const auto& [name, v] : fusion_params_.params().items()) c.tensors.push_back({"fusion." + name, v.value()});
  return c;
}

Detector Detector::from_container(const Container& c) {
  require(c.meta.value("kind", "") == "detector", Errc::kParse, "container is not a detector checkpoint");
  const DetectorConfig cfg = DetectorConfig::from_json(c.meta.at("config"));
  std::optional<FusionSetup> fusion;
  if (c.meta.contains("fusion") && !c.meta["fusion"].is_null()) {
    const auto& f = c.meta["fusion"];
    FusionSetup s;
    s.config.enabled = true;
    s.config.mode = fusion::parse_fusion_mode(f.at("mode").get<std::string>());
    s.config.levels = f.at("levels").get<std::vector<std::string>>();
    s.config.init = fusion::parse_init_policy(f.at("init_policy").get<std::string>());
    s.config.align_corners = f.value("align_corners", true);
    s.config.mask_bias = f.value("mask_bias", 10.0);
    s.latent_dim = f.at("latent_dim").get<int>();
    s.encoder_checksum = f.at("encoder_checksum").get<std::uint64_t>();
    fusion = s;
  }
  Detector det(cfg, fusion);
  auto restore = [&](const nn::ParameterSet<float>& set, const std::string& prefix) {
    for (auto [name, handle] : set.items()) {
      const auto& t = c.tensor(prefix + name);
      require(t.shape() == handle.value().shape(), Errc::kShape, "checkpoint tensor " + prefix + name + " has the wrong shape");
      handle.mutable_value() = t;
    }
  };
  restore(det.params_, "");
  restore(det.fusion_params_.params(), "fusion.");
  return det;
}

void Detector::save(const std::filesystem::path& path) const { write_container(path, to_container()); }

Detector Detector::load(const std::filesystem::path& path) { return from_container(read_container(path)); }

const latentgrid::LatentGrid* grid_for(const Detector& det, const dataset::Scene& scene, const GridLookup* grids) {
  if (!det.fused()) return nullptr;
  require(grids != nullptr, Errc::kDatasetConsistency, "fused detector needs precomputed latent grids");
  auto it = grids->find(scene.id);
  require(it != grids->end(), Errc::kDatasetConsistency, "no latent grid for scene '" + scene.id + "'");
  const auto& g = it->second;
  require(g.scene_id == scene.id, Errc::kDatasetConsistency, "grid keyed '" + scene.id + "' belongs to '" + g.scene_id + "'");
  const auto want = det.fusion_setup()->encoder_checksum;
  require(want == 0 || g.encoder_checksum == want, Errc::kDatasetConsistency,
          "grid for scene '" + scene.id + "' was made by a different encoder");
  return &g;
}

DetectorTrainResult train_detector(const std::vector<dataset::Scene>& scenes, const DetectorConfig& config,
                                   const std::optional<FusionSetup>& fusion, const GridLookup* grids,
                                   const std::function<void(const EpochLog&)>& on_epoch) {
  require(!scenes.empty() || config.epochs == 0, Errc::kEmptyDataset, "no training scenes");
  DetectorTrainResult result{Detector(config, fusion), {}};
  Detector& det = result.detector;
  for (const auto& s : scenes) {
    dataset::validate_scene(s);
    for (int l : s.labels)
      require(l <= config.num_classes, Errc::kDatasetConsistency,
              "scene '" + s.id + "' has label " + std::to_string(l) + " beyond num_classes");
    grid_for(det, s, grids);
  }

  nn::ParameterSet<float> trainable;
  for (const auto& [name, v] : det.params().items()) trainable.adopt(name, v);
  for (const auto& [name, v] : det.fusion_params().params().items()) trainable.adopt("fusion." + name, v);
  nn::Adam<float> opt(trainable, nn::AdamOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay, config.clip_norm});

  std::mt19937_64 rng(config.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  const long total_steps = static_cast<long>(config.epochs) * static_cast<long>(scenes.size());
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t i : order) {
      const auto& scene = scenes[i];
      LossBreakdown lb = det.losses(scene, grid_for(det, scene, grids), rng);
      if (lb.total.requires_grad()) lb.total.backward();
      const double warm = config.warmup_steps > 0 ? std::min(1.0, double(step + 1) / config.warmup_steps) : 1.0;
      const double cosine = 0.5 * (1.0 + std::cos(M_PI * double(step) / double(std::max(total_steps, 1L))));
      opt.step(warm * (0.02 + 0.98 * cosine));
      trainable.zero_grad();
      ++step;
      log.loss += lb.total.value()[0];
      log.rpn_objectness += lb.rpn_objectness;
      log.rpn_box += lb.rpn_box;
      log.classification += lb.classification;
      log.box_regression += lb.box_regression;
    }
    const double n = std::max<double>(1.0, double(scenes.size()));
    log.loss /= n;
    log.rpn_objectness /= n;
    log.rpn_box /= n;
    log.classification /= n;
    log.box_regression /= n;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

nlohmann::json detections_to_json(const std::string& scene_id, const std::vector<Detection>& dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dets)
    arr.push_back({{"scene_id", scene_id},
                   {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                   {"class", d.class_index},
                   {"score", d.score}});
  return arr;
}

}  // namespace annodet::detector
