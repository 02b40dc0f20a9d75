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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "annodet/core/container.hpp"
#include "annodet/core/resample.hpp"
#include "annodet/core/stats.hpp"
#include "annodet/detector/roi_align.hpp"
#include "annodet/evaluation/evaluation.hpp"
#include "annodet/fusion/fusion.hpp"
#include "annodet/harness/harness.hpp"
#include "oracles.hpp"

using namespace annodet;
using VarD = nn::Var<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

Tensor<double> rnd(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

dataset::Scene flat_scene(int h, int w) {
  dataset::Scene s;
  s.id = "flat";
  s.image = Tensor<float>({3, h, w}, 0.5f);
  return s;
}

embedding::ConvEncoder small_encoder(int D) {
  embedding::EncoderConfig ec;
  ec.latent_dim = D;
  embedding::ConvEncoder enc(ec);
  enc.freeze();
  return enc;
}

// ---------------------------------------------------------------------------

Outcome grid_geometry() {
  Outcome o;
  const auto [r, c] = latentgrid::grid_shape(600, 600, 300, 50);
  o.expect(r == 7 && c == 7, "grid_shape(600, 600, 300, 50) is not 7x7");
  const auto enc = small_encoder(8);
  const auto g = latentgrid::extract_grid(flat_scene(600, 600), enc, 300, 50);
  o.expect(g.rows() == 7 && g.cols() == 7 && g.depth() == 8, "extracted 600x600 grid is not 8x7x7");

  std::mt19937_64 rng(1);
  int cases = 0;
  for (; cases < 500; ++cases) {
    const int h = 1 + int(rng() % 200), w = 1 + int(rng() % 200);
    const int win = 1 + int(rng() % std::min(h, w)), stride = 1 + int(rng() % 40);
    std::set<int> ys, xs;
    for (const auto& [y, x] : oracle::windows(h, w, win, stride)) {
      ys.insert(y);
      xs.insert(x);
    }
    const auto [gr, gc] = latentgrid::grid_shape(h, w, win, stride);
    if (gr != int(ys.size()) || gc != int(xs.size())) {
      o.expect(false, "grid_shape disagrees with window enumeration at " + std::to_string(h) + "x" + std::to_string(w));
      break;
    }
  }
  for (int k = 0; k < 5; ++k) {
    const int h = 32 + int(rng() % 64), w = 32 + int(rng() % 64), stride = 1 + int(rng() % 24);
    const auto gg = latentgrid::extract_grid(flat_scene(h, w), enc, 32, stride);
    const auto [gr, gc] = latentgrid::grid_shape(h, w, 32, stride);
    o.expect(gg.rows() == gr && gg.cols() == gc, "extract_grid shape differs from grid_shape");
  }
  o.detail = o.pass ? "7x7; " + std::to_string(cases) + " random geometries match" : o.detail;
  return o;
}

Outcome fusion_identities() {
  using namespace fusion;
  Outcome o;
  std::mt19937_64 rng(2);
  const int C = 64, D = 64;
  PyramidFeatures<float> pyr;
  int side = 32;
  for (const auto& l : all_levels()) {
    pyr[l] = Var<float>::constant(rnd({1, C, side, side}, rng, -3, 3).cast<float>());
    side /= 2;
  }
  latentgrid::LatentGrid grid;
  grid.values = rnd({D, 11, 11}, rng).cast<float>();
  grid.window = 48;
  grid.stride = 8;

  auto enabled = [](FusionMode m, std::vector<std::string> levels) {
    FusionConfig c;
    c.enabled = true;
    c.mode = m;
    c.levels = std::move(levels);
    return c;
  };
  double worst_exact = 0, worst_rel = 0;
  for (auto m : {FusionMode::kAdditive, FusionMode::kFilm}) {
    const auto cfg = enabled(m, all_levels());
    const auto out = augment_pyramid(pyr, grid, FusionParams(D, C, cfg, 5), cfg);
    for (const auto& l : all_levels())
      worst_exact = std::max(worst_exact, double(max_abs_diff(out.at(l).value(), pyr.at(l).value())));
  }
  const auto empty = enabled(FusionMode::kMask, {});
  const auto pass = augment_pyramid(pyr, grid, FusionParams(D, C, empty, 5), empty);
  for (const auto& l : all_levels())
    worst_exact = std::max(worst_exact, double(max_abs_diff(pass.at(l).value(), pyr.at(l).value())));
  const auto mask = enabled(FusionMode::kMask, all_levels());
  const auto mout = augment_pyramid(pyr, grid, FusionParams(D, C, mask, 5), mask);
  for (const auto& l : all_levels()) {
    const auto& a = mout.at(l).value();
    const auto& b = pyr.at(l).value();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (b[i] != 0) worst_rel = std::max(worst_rel, std::abs(double(a[i]) - b[i]) / std::abs(double(b[i])));
  }
  o.expect(worst_exact == 0.0, fmt("additive/FiLM/empty max abs diff %.3g", worst_exact));
  o.expect(worst_rel <= 1e-4, fmt("mask relative diff %.3g", worst_rel));
  if (o.pass) o.detail = fmt("max abs diff %.0f; mask rel diff %.2e", worst_exact, worst_rel);
  return o;
}

Outcome identity_detector() {
  Outcome o;
  detector::DetectorConfig cfg;
  cfg.seed = 3;
  const auto enc = small_encoder(64);
  dataset::GeneratorConfig gen;
  gen.n_scenes = 10;
  const auto scenes = dataset::generate_synthetic_scenes(gen, 17);
  const detector::Detector base(cfg);
  double worst = 0;
  std::size_t total = 0;
  for (auto mode : {fusion::FusionMode::kAdditive, fusion::FusionMode::kFilm, fusion::FusionMode::kMask}) {
    detector::FusionSetup fs;
    fs.config.enabled = true;
    fs.config.mode = mode;
    fs.latent_dim = 64;
    fs.encoder_checksum = enc.checksum();
    const detector::Detector fused(cfg, fs);
    for (const auto& s : scenes) {
      const auto g = latentgrid::extract_grid(s, enc, 48, 8);
      const auto a = base.infer(s, nullptr, 0.05, 0.5), b = fused.infer(s, &g, 0.05, 0.5);
      if (a.size() != b.size()) {
        o.expect(false, "detection counts differ on " + s.id);
        continue;
      }
      total += a.size();
      for (std::size_t i = 0; i < a.size(); ++i) {
        o.expect(a[i].class_index == b[i].class_index, "class differs on " + s.id);
        worst = std::max(worst, std::abs(a[i].score - b[i].score));
        const double box = std::max({std::abs(a[i].box.x_min - b[i].box.x_min), std::abs(a[i].box.y_min - b[i].box.y_min),
                                     std::abs(a[i].box.x_max - b[i].box.x_max), std::abs(a[i].box.y_max - b[i].box.y_max)});
        o.expect(box <= 1e-3, fmt("box moved by %.3g px", box));
      }
    }
  }
  o.expect(worst <= 1e-5, fmt("score diff %.3g", worst));
  if (o.pass) o.detail = fmt("%.0f detections over 3 modes x 10 scenes; max score diff %.2e", double(total), worst);
  return o;
}

Outcome gradients() {
  Outcome o;
  std::mt19937_64 rng(4);
  double worst = 0;
  auto check = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    o.expect(err < 1e-4, name + fmt(" relative error %.3g", err));
  };
  auto param = [&](Shape s) { return VarD::parameter(rnd(std::move(s), rng)); };
  auto readout = [&](const VarD& y) {
    std::mt19937_64 r3(6);
    return nn::sum(nn::mul(y, VarD::constant(rnd(y.shape(), r3))));
  };
  const Shape s{1, 3, 4, 3};
  const auto P = param(s), G = param(s), gt = param({1, 2, 4, 3});
  const auto pw = param({3, 2, 1, 1}), pb = param({3});
  const auto gw = param({3, 3, 1, 1}), gb = param({3}), bw = param({3, 3, 1, 1}), bb = param({3});
  const auto mw = param({1, 3, 1, 1}), mb = param({1});
  check("projection", oracle::gradient_error({gt, pw, pb}, [&](const auto& v) {
          return readout(fusion::project_grid(v[0], v[1], v[2]));
        }));
  check("additive", oracle::gradient_error({P, G}, [&](const auto& v) { return readout(fusion::fuse_additive(v[0], v[1])); }));
  check("film", oracle::gradient_error({P, G, gw, gb, bw, bb}, [&](const auto& v) {
          return readout(fusion::fuse_film(v[0], v[1], v[2], v[3], v[4], v[5]));
        }));
  check("mask", oracle::gradient_error({P, G, mw, mb}, [&](const auto& v) {
          return readout(fusion::fuse_mask(v[0], v[1], v[2], v[3]));
        }));

  const auto l0 = param({1, 2, 8, 9}), l1 = param({1, 2, 4, 5});
  const std::vector<dataset::Box> rois{{1.3, 2.1, 13.7, 11.2}, {4.4, 0.6, 30.5, 19.9}, {0.2, 0.3, 5.1, 4.2}};
  check("roi_align", oracle::gradient_error({l0, l1}, [&](const auto& v) {
          return readout(detector::roi_align<double>({v[0], v[1]}, {0.5, 0.25}, rois, {0, 1, 0}, {3, 2}));
        }));

  const auto pred = VarD::parameter(rnd({6, 4}, rng, -3, 3));
  auto target = rnd({6, 4}, rng, -3, 3);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (std::abs(std::abs(pred.value()[i] - target[i]) - 1.0 / 9) < 1e-3) target[i] += 0.05;
  check("smooth_l1", oracle::gradient_error({pred}, [&](const auto& v) { return nn::smooth_l1<double>(v[0], target, 1.0 / 9, 5.0); }));
  const auto logits = VarD::parameter(rnd({6, 4}, rng, -2, 2));
  check("cross_entropy", oracle::gradient_error({logits}, [&](const auto& v) {
          return nn::softmax_cross_entropy(v[0], {0, 3, 1, 2, 2, 0});
        }));

  using namespace embedding;
  for (auto kind : {LossKind::kDtl, LossKind::kMatl}) {
    int checked = 0;
    for (int trial = 0; trial < 60 && checked < 10; ++trial) {
      const int n = 6, D = 5;
      const auto E = rnd({n, D}, rng);
      std::vector<AnnotationVector> anns;
      std::uniform_real_distribution<double> u(0.05, 1.0);
      for (int i = 0; i < n; ++i) {
        const int c = int(rng() % 4);
        anns.push_back(c == 0 ? AnnotationVector::background() : AnnotationVector{c, u(rng), u(rng), false});
      }
      const auto trip = mine_triplets(E.cast<float>(), anns, AnnotationWeights{}, MiningMode::kAll, MarginRule{});
      if (trip.empty()) continue;
      const TripletObjective obj{kind, 0.8, 1.5};
      auto dist = [&](int i, int j) {
        double acc = 0;
        for (int k = 0; k < D; ++k) acc += (E[i * D + k] - E[j * D + k]) * (E[i * D + k] - E[j * D + k]);
        return std::sqrt(acc);
      };
      bool kink = false;
      for (const auto& t : trip) {
        const double m = kind == LossKind::kDtl ? 0.8 : 1.5 * (t.ann_an - t.ann_ap);
        kink = kink || std::abs(dist(t.anchor, t.positive) - dist(t.anchor, t.negative) + m) < 1e-3;
      }
      if (kink) continue;
      Tensor<double> g;
      triplet_objective(E, trip, obj, &g);
      double num2 = 0, ana2 = 0, diff2 = 0;
      for (std::size_t i = 0; i < E.size(); ++i) {
        Tensor<double> ep = E, em = E;
        ep[i] += 1e-6;
        em[i] -= 1e-6;
        const double nd =
            (triplet_objective<double>(ep, trip, obj, nullptr) - triplet_objective<double>(em, trip, obj, nullptr)) / 2e-6;
        num2 += nd * nd;
        ana2 += g[i] * g[i];
        diff2 += (nd - g[i]) * (nd - g[i]);
      }
      if (num2 == 0 && ana2 == 0) continue;
      check(kind == LossKind::kDtl ? "dtl" : "matl", std::sqrt(diff2) / std::sqrt(std::max(num2, ana2)));
      ++checked;
    }
    o.expect(checked >= 5, "too few kink-free triplet cases");
  }
  if (o.pass) o.detail = fmt("worst relative error %.2e", worst);
  return o;
}

Outcome loss_reduction() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(0, 3), a(0, 1), gap(0.0, 1.0), scale(0.1, 3);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    const double dap = d(rng), dan = d(rng), ann_ap = a(rng), g = gap(rng), s = scale(rng);
    const double ann_an = ann_ap + g;
    const auto m = embedding::matl_loss(dap, dan, ann_ap, ann_an, s);
    const auto t = embedding::dtl_loss(dap, dan, s * (ann_an - ann_ap));
    worst = std::max({worst, std::abs(m.value - t.value), std::abs(m.d_ap - t.d_ap), std::abs(m.d_an - t.d_an)});
  }
  o.expect(worst <= 1e-12, fmt("max difference %.3g", worst));
  if (o.pass) o.detail = fmt("10000 inputs; max difference %.1e", worst);
  return o;
}

Outcome metric_oracles() {
  using namespace evaluation;
  Outcome o;
  // Hand cases.
  o.expect(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0, "iou identical");
  o.expect(iou({0, 0, 2, 2}, {3, 3, 4, 4}) == 0.0, "iou disjoint");
  o.expect(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == 1.0 / 7, "iou 1/7");
  {
    const auto m = match_detections({{{0, 0, 10, 10}, 1, 0.9}}, {{0, 0, 10, 10}}, {1});
    o.expect(m.true_positives() == 1 && m.false_positives() == 0 && m.false_negatives() == 0, "one det on one gt");
    const auto two = match_detections({{{0, 0, 10, 10}, 1, 0.6}, {{0, 0, 10, 10}, 1, 0.9}}, {{0, 0, 10, 10}}, {1});
    o.expect(two.is_tp[1] && !two.is_tp[0], "two dets on one gt");
  }
  o.expect(average_precision({0.9}, {true}, 1) == 1.0, "AP perfect");
  o.expect(average_precision({}, {}, 1) == 0.0, "AP no detections");
  o.expect(std::abs(average_precision({0.9, 0.8, 0.7}, {true, false, true}, 2) -
                    oracle::recall_level_ap({0.9, 0.8, 0.7}, {true, false, true}, 2)) <= 1e-12,
           "AP 3-det/2-gt");
  {
    const auto all = precision_recall_f1(5, 0, 5), none = precision_recall_f1(0, 0, 5), mid = precision_recall_f1(3, 1, 5);
    o.expect(all.precision == 1 && all.recall == 1 && all.f1 == 1, "PRF1 perfect");
    o.expect(none.precision == 0 && none.recall == 0 && none.f1 == 0, "PRF1 empty");
    o.expect(mid.precision == 0.75 && mid.recall == 0.6 && std::abs(mid.f1 - 2.0 / 3) <= 1e-15, "PRF1 3/1/2");
  }
  o.expect(roc_auc({{0.9, true}, {0.8, true}, {0.2, false}}).auc == 1.0, "AUC separated");
  o.expect(roc_auc({{0.5, true}, {0.5, false}, {0.5, false}}).auc == 0.5, "AUC ties");
  o.expect(roc_auc({{0.9, true}, {0.8, false}, {0.7, true}, {0.1, false}}).auc == 0.75, "AUC hand case");

  std::mt19937_64 rng(8);
  auto int_box = [&](int extent) {
    const int x0 = int(rng() % (extent - 1)), y0 = int(rng() % (extent - 1));
    const int x1 = x0 + 1 + int(rng() % (extent - x0 - 1)), y1 = y0 + 1 + int(rng() % (extent - y0 - 1));
    return Box{double(x0), double(y0), double(x1), double(y1)};
  };
  const int kCases = 200;
  double worst = 0;
  for (int c = 0; c < kCases; ++c) {
    const Box a = int_box(20), b = int_box(20);
    worst = std::max(worst, std::abs(iou(a, b) - oracle::raster_iou(a, b)));
  }
  int match_mismatch = 0;
  for (int c = 0; c < kCases; ++c) {
    std::vector<Detection> dets;
    std::vector<Box> gts;
    std::vector<int> labels;
    for (int g = 0; g < 3; ++g) {
      gts.push_back(int_box(16));
      labels.push_back(1 + int(rng() % 2));
    }
    std::vector<double> scores{0.95, 0.85, 0.75, 0.65, 0.55};
    std::shuffle(scores.begin(), scores.end(), rng);
    for (int d = 0; d < 5; ++d) {
      const Box base = gts[rng() % 3];
      const double dx = double(rng() % 3), dy = double(rng() % 2);
      const Box jitter = rng() % 3 ? Box{base.x_min + dx, base.y_min, base.x_max + dx, base.y_max + dy} : int_box(16);
      dets.push_back({jitter, 1 + int(rng() % 2), scores[d]});
    }
    const auto got = match_detections(dets, gts, labels);
    const auto want = oracle::greedy_match(dets, gts, labels, 0.5, oracle::raster_iou);
    for (std::size_t d = 0; d < dets.size(); ++d) match_mismatch += got.matched_gt[d] != want[d];
  }
  o.expect(match_mismatch == 0, std::to_string(match_mismatch) + " matching disagreements");
  for (int c = 0; c < kCases; ++c) {
    const int n = 1 + int(rng() % 10);
    std::vector<double> scores;
    std::vector<bool> tp;
    std::size_t n_tp = 0;
    for (int i = 0; i < n; ++i) {
      scores.push_back(double(i + 1) / (n + 1));
      tp.push_back(rng() % 2);
      n_tp += tp.back();
    }
    std::shuffle(scores.begin(), scores.end(), rng);
    const std::size_t n_gt = std::max<std::size_t>(1, n_tp + rng() % 3);
    worst = std::max(worst, std::abs(average_precision(scores, tp, n_gt) - oracle::recall_level_ap(scores, tp, n_gt)));
  }
  for (int c = 0; c < kCases; ++c) {
    std::vector<std::pair<double, bool>> ex{{double(rng() % 5) / 4, true}, {double(rng() % 5) / 4, false}};
    const int n = int(rng() % 12);
    for (int i = 0; i < n; ++i) ex.push_back({double(rng() % 5) / 4, bool(rng() % 2)});
    worst = std::max(worst, std::abs(roc_auc(ex).auc - oracle::mann_whitney_auc(ex)));
  }
  o.expect(worst <= 1e-8, fmt("oracle difference %.3g", worst));
  if (o.pass) o.detail = fmt("hand cases exact; %.0f cases per metric, max diff %.1e", kCases, worst);
  return o;
}

Outcome bilinear() {
  Outcome o;
  std::mt19937_64 rng(9);
  const auto x = rnd({3, 5, 7}, rng);
  for (bool ac : {true, false}) o.expect(resize_bilinear(x, 5, 7, ac) == x, "same-resolution resample is not exact");
  const Tensor<double> c({2, 3, 4}, 0.7);
  for (bool ac : {true, false})
    for (auto [h, w] : {std::pair{1, 1}, std::pair{6, 9}, std::pair{2, 13}}) {
      const auto r = resize_bilinear(c, h, w, ac);
      for (double v : r.values()) o.expect(v == 0.7, "constant not preserved");
    }
  const auto hand = resize_bilinear(Tensor<double>({1, 1, 2}, std::vector<double>{0, 1}), 1, 3, true);
  o.expect(std::abs(hand[0]) <= 1e-9 && std::abs(hand[1] - 0.5) <= 1e-9 && std::abs(hand[2] - 1) <= 1e-9,
           "1x2 -> 1x3 is not [0, 0.5, 1]");
  // The same operation as the fusion path sees it.
  latentgrid::LatentGrid g;
  g.values = Tensor<float>({1, 1, 2}, std::vector<float>{0, 1});
  const auto fg = latentgrid::resample_grid(g, {1, 3, true});
  o.expect(fg[0] == 0.0f && fg[1] == 0.5f && fg[2] == 1.0f, "resample_grid hand case");
  if (o.pass) o.detail = fmt("hand case [%.1f, %.1f, %.1f]", hand[0], hand[1], hand[2]);
  return o;
}

// Mean different-class over mean same-class distance on a fixed patch set.
double separation(const Tensor<float>& e, const std::vector<dataset::Patch>& ps) {
  const int n = e.dim(0), D = e.dim(1);
  double same = 0, diff = 0;
  long ns = 0, nd = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dist = embedding::euclidean({e.data() + i * D, std::size_t(D)}, {e.data() + j * D, std::size_t(D)});
      if (ps[i].annotation.class_index == ps[j].annotation.class_index) {
        same += dist;
        ++ns;
      } else {
        diff += dist;
        ++nd;
      }
    }
  return (diff / double(nd)) / (same / double(ns));
}

Outcome embedding_structure() {
  Outcome o;
  harness::ExperimentConfig cfg;
  cfg.synth.n_scenes = 120;
  auto train_scenes = dataset::generate_synthetic_scenes(cfg.synth, 101);
  auto held_scenes = dataset::generate_synthetic_scenes(cfg.synth, 202);
  held_scenes.resize(40);
  const auto train = harness::make_patches(train_scenes, cfg);
  const auto held_all = harness::make_patches(held_scenes, cfg);
  std::vector<dataset::AnnotationVector> anns;
  for (const auto& p : held_all) anns.push_back(p.annotation);
  std::vector<dataset::Patch> held;
  std::vector<Tensor<float>> pixels;
  for (auto i : embedding::balanced_subsample(anns, 400, 303)) {
    held.push_back(held_all[i]);
    pixels.push_back(held_all[i].pixels);
  }

  auto train_variant = [&](harness::EmbeddingVariant v) {
    cfg.variant = v;
    cfg.embed_epochs = 50;
    auto tc = harness::embedding_config(cfg, 0);
    return embedding::train_embedding(train, harness::encoder_config(cfg, 0), tc).encoder;
  };

  const auto matl = train_variant(harness::EmbeddingVariant::kMatl);
  const auto e = matl.encode_batch(pixels);
  const embedding::AnnotationWeights w;
  std::vector<double> ann_d, emb_d;
  const int D = e.dim(1);
  for (std::size_t i = 0; i < held.size(); ++i)
    for (std::size_t j = i + 1; j < held.size(); ++j) {
      ann_d.push_back(embedding::annotation_distance(held[i].annotation, held[j].annotation, w));
      emb_d.push_back(embedding::euclidean({e.data() + i * D, std::size_t(D)}, {e.data() + j * D, std::size_t(D)}));
    }
  const double rho = spearman(ann_d, emb_d);
  o.expect(rho > 0.3, fmt("MATL Spearman %.3f <= 0.3", rho));

  const auto dtl = train_variant(harness::EmbeddingVariant::kDtl);
  const embedding::ConvEncoder untrained(harness::encoder_config(cfg, 0));
  const double s_dtl = separation(dtl.encode_batch(pixels), held), s_raw = separation(untrained.encode_batch(pixels), held);
  o.expect(s_dtl > s_raw, fmt("DTL separation %.3f <= untrained %.3f", s_dtl, s_raw));
  o.detail = fmt("Spearman %.3f over held-out pairs; separation DTL %.3f vs untrained %.3f", rho, s_dtl, s_raw);
  return o;
}

harness::ExperimentConfig desk_config(const fs::path& root, bool fused) {
  auto kv = KeyValueConfig::parse("synth.n_scenes = 200\nsynth.image_size = 128\nsynth.n_classes = 3\nrepeats = 3\n");
  kv.set("embed.variant", fused ? "matl" : "none");
  kv.set("fusion.mode", fused ? "mask" : "off");
  kv.set("output_dir", root.string());
  return harness::ExperimentConfig::from_keyvalue(kv);
}

Outcome desk_experiment(const fs::path& work) {
  Outcome o;
  auto mean_map = [](const std::vector<harness::RunRecord>& recs) {
    std::vector<double> v;
    for (const auto& r : recs) v.push_back(r.metrics.map50);
    return std::pair{mean(v), v.size() > 1 ? sample_std(v) : 0.0};
  };
  const auto base = harness::run_experiment(desk_config(work / "desk", false));
  const auto fused = harness::run_experiment(desk_config(work / "desk", true));
  const auto [bm, bs] = mean_map(base);
  const auto [fm, fsd] = mean_map(fused);
  o.expect(base.size() == 3 && fused.size() == 3, "expected 3 repeats per variant");
  o.expect(bm >= 0.5, fmt("baseline mAP50 %.3f < 0.5", bm));
  o.expect(fm >= bm - 0.02, fmt("MATL+mask mAP50 %.3f < baseline %.3f - 0.02", fm, bm));
  o.detail = fmt("baseline mAP50 %.3f ± %.3f; ", bm, bs) + fmt("MATL+mask %.3f ± %.3f; delta %+.3f", fm, fsd, fm - bm);
  return o;
}

std::vector<fs::path> metric_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().filename() == "metrics.json") out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome reproducibility(const std::string& cli, const fs::path& work) {
  Outcome o;
  const std::string sets =
      " -s synth.n_scenes=48 -s embed.epochs=3 -s embed.max_patches=200 -s detect.epochs=3 -s repeats=2 --no-plots";
  std::vector<fs::path> roots{work / "repro_a", work / "repro_b"};
  for (const auto& r : roots) {
    fs::remove_all(r);
    const std::string cmd = "\"" + cli + "\" run -o \"" + r.string() + "\"" + sets + " > \"" + (work / "repro.log").string() + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    o.expect(rc == 0, "`run` exited with status " + std::to_string(rc));
  }
  if (!o.pass) return o;
  const auto a = metric_files(roots[0]), b = metric_files(roots[1]);
  o.expect(!a.empty() && a == b, "metrics files differ in layout");
  for (const auto& rel : a) o.expect(read_file(roots[0] / rel) == read_file(roots[1] / rel), rel.string() + " differs");
  if (o.pass) o.detail = std::to_string(a.size()) + " metrics.json files byte-identical across two executions";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("annodet acceptance checks");
  std::string cli, work = (fs::temp_directory_path() / "annodet_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the annodet executable");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  struct Criterion {
    int id;
    std::string name;
    double limit_s;  // 0 means no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "grid geometry", 60, grid_geometry},
      {2, "fusion identities", 60, fusion_identities},
      {3, "identity-fusion detector equivalence", 300, identity_detector},
      {4, "gradient checks", 300, gradients},
      {5, "MATL/DTL reduction", 0, loss_reduction},
      {6, "metric oracles", 0, metric_oracles},
      {7, "bilinear resampling", 0, bilinear},
      {8, "embedding structure", 900, embedding_structure},
      {9, "desk-scale experiment", 2700, [&] { return desk_experiment(work); }},
      {10, "reproducibility", 0,
       [&] {
         if (cli.empty()) return Outcome{false, "no --cli executable given"};
         return reproducibility(cli, work);
       }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs > c.limit_s) out.expect(false, fmt("took %.0f s, limit %.0f s", secs, c.limit_s));
    failed += !out.pass;
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
