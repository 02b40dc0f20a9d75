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

#include <random>
#include <set>
#include <tuple>

#include "annodet/embedding/embedding.hpp"
#include "support.hpp"

using namespace annodet;
using namespace annodet::embedding;

namespace {

AnnotationVector ann(int cls, double area, double sq) {
  AnnotationVector a;
  a.class_index = cls;
  a.area_norm = area;
  a.squareness = sq;
  a.is_background = cls == 0;
  return a;
}

AnnotationVector random_ann(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const int cls = int(rng() % 4);
  return cls == 0 ? AnnotationVector::background() : ann(cls, u(rng), u(rng));
}

std::vector<dataset::Patch> tiny_patches(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<dataset::Patch> out;
  for (int i = 0; i < n; ++i) {
    dataset::Patch p;
    p.pixels = testing::random_tensor_f({3, 48, 48}, rng, 0, 1);
    p.side = 48;
    p.annotation = i % 4 == 0 ? AnnotationVector::background() : ann(1 + i % 3, 0.1 + 0.05 * (i % 5), 0.5 + 0.1 * (i % 4));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_SUITE("embedding") {
  TEST_CASE("annotation distance hand cases") {
    const AnnotationWeights w;
    const auto a = ann(1, 0.2, 0.7);
    CHECK(annotation_distance(a, a, w) == 0.0);
    CHECK(annotation_distance(a, ann(1, 0.5, 0.7), w) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(annotation_distance(a, ann(2, 0.2, 0.7), w) == 1.0);
    CHECK_ERRC(annotation_distance(a, a, AnnotationWeights{-1, 1, 1}), Errc::kInvalidWeights);
    CHECK_ERRC(annotation_distance(a, a, AnnotationWeights{0, 0, 0}), Errc::kInvalidWeights);
  }

  TEST_CASE("annotation distance is a symmetric pseudo-metric") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0, 3);
    for (int t = 0; t < 2000; ++t) {
      const AnnotationWeights w{u(rng), u(rng), u(rng) + 0.01};
      const auto a = random_ann(rng), b = random_ann(rng), c = random_ann(rng);
      const double ab = annotation_distance(a, b, w), ba = annotation_distance(b, a, w);
      CHECK(ab == ba);
      CHECK(ab >= 0);
      CHECK(annotation_distance(a, a, w) == 0.0);
      CHECK(ab <= annotation_distance(a, c, w) + annotation_distance(c, b, w) + 1e-12);
    }
  }

  TEST_CASE("triplet loss hand cases") {
    CHECK(dtl_loss(0, 2, 1).value == 0.0);
    CHECK(dtl_loss(1, 1, 0.5).value == 0.5);
    CHECK(dtl_loss(0.7, 0.7, 0).value == 0.0);
    CHECK(matl_loss(0, 2, 0.1, 1.1, 1).value == 0.0);
    CHECK(matl_loss(1, 1, 0.2, 0.6, 1).value == doctest::Approx(0.4).epsilon(1e-12));
    CHECK_ERRC(matl_loss(1, 1, 0.6, 0.6, 1), Errc::kTripletOrder);
    CHECK_ERRC(matl_loss(1, 1, 0.7, 0.6, 1), Errc::kTripletOrder);
    CHECK_ERRC(dtl_loss(1, 1, -0.1), Errc::kInvalidConfig);
  }

  TEST_CASE("losses are non-negative and vanish where the margin holds") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 3);
    for (int t = 0; t < 5000; ++t) {
      const double dap = u(rng), dan = u(rng), m = u(rng), a = u(rng) / 3, gap = u(rng) / 3 + 1e-3, s = u(rng) + 0.1;
      const double dv = dtl_loss(dap, dan, m).value, mv = matl_loss(dap, dan, a, a + gap, s).value;
      CHECK(dv >= 0);
      CHECK(mv >= 0);
      if (dap + m <= dan) CHECK(dv == 0.0);
      if (dap + s * gap < dan - 1e-12) CHECK(mv == 0.0);
    }
  }

  TEST_CASE("MATL with constant annotation gap equals DTL") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 4);
    const double gap = 0.37;
    for (int t = 0; t < 10000; ++t) {
      const double dap = u(rng), dan = u(rng), a = u(rng) / 4;
      const auto m = matl_loss(dap, dan, a, a + gap, 1.0);
      const auto d = dtl_loss(dap, dan, (a + gap) - a);
      CHECK(std::abs(m.value - d.value) <= 1e-12);
      CHECK(std::abs(m.value - dtl_loss(dap, dan, gap).value) <= 1e-12);
    }
  }

  TEST_CASE("mining enumerates ordered triplets") {
    const std::vector<AnnotationVector> anns{ann(1, 0.2, 0.5), ann(2, 0.3, 0.5), ann(3, 0.2, 0.9)};
    Tensor<float> e({3, 2}, std::vector<float>{0, 0, 1, 0, 0, 2});
    const AnnotationWeights w;
    const MarginRule rule;
    const auto got = mine_triplets(e, anns, w, MiningMode::kAll, rule);
    std::set<std::tuple<int, int, int>> expected, seen;
    for (int a = 0; a < 3; ++a)
      for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q)
          if (a != p && a != q && p != q &&
              annotation_distance(anns[a], anns[p], w) < annotation_distance(anns[a], anns[q], w))
            expected.insert({a, p, q});
    for (const auto& t : got) seen.insert({t.anchor, t.positive, t.negative});
    CHECK(seen == expected);
    CHECK(got.size() == expected.size());

    const std::vector<AnnotationVector> same(5, ann(1, 0.3, 0.3));
    CHECK(mine_triplets(Tensor<float>({5, 2}), same, w, MiningMode::kAll, rule).empty());
  }

  TEST_CASE("semi-hard mining is a subset of all-mode within the counting bound") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
      const int n = 3 + int(rng() % 8);
      std::vector<AnnotationVector> anns;
      for (int i = 0; i < n; ++i) anns.push_back(random_ann(rng));
      const auto e = testing::random_tensor_f({n, 4}, rng);
      const AnnotationWeights w;
      const MarginRule rule;
      const auto all = mine_triplets(e, anns, w, MiningMode::kAll, rule);
      const auto semi = mine_triplets(e, anns, w, MiningMode::kSemiHard, rule);
      CHECK(all.size() <= std::size_t(n * (n - 1) * (n - 2)));
      std::set<std::tuple<int, int, int>> s;
      for (const auto& x : all) s.insert({x.anchor, x.positive, x.negative});
      for (const auto& x : semi) {
        CHECK(s.count({x.anchor, x.positive, x.negative}) == 1);
        CHECK(x.ann_ap < x.ann_an);
      }
    }
  }

  TEST_CASE("triplet objective gradients match finite differences") {
    std::mt19937_64 rng(41);
    for (auto kind : {LossKind::kDtl, LossKind::kMatl}) {
      int checked = 0;
      for (int trial = 0; trial < 40 && checked < 10; ++trial) {
        const int n = 6, D = 5;
        const auto E = testing::random_tensor({n, D}, rng);
        std::vector<AnnotationVector> anns;
        for (int i = 0; i < n; ++i) anns.push_back(random_ann(rng));
        const auto trip = mine_triplets(E.cast<float>(), anns, AnnotationWeights{}, MiningMode::kAll, MarginRule{});
        if (trip.empty()) continue;
        const TripletObjective obj{kind, 0.8, 1.5};
        // Stay away from hinge kinks.
        bool near_kink = false;
        for (const auto& t : trip) {
          auto dist = [&](int i, int j) {
            double s = 0;
            for (int k = 0; k < D; ++k) s += (E[i * D + k] - E[j * D + k]) * (E[i * D + k] - E[j * D + k]);
            return std::sqrt(s);
          };
          const double m = kind == LossKind::kDtl ? 0.8 : 1.5 * (t.ann_an - t.ann_ap);
          if (std::abs(dist(t.anchor, t.positive) - dist(t.anchor, t.negative) + m) < 1e-3) near_kink = true;
        }
        if (near_kink) continue;
        Tensor<double> g;
        const double f0 = triplet_objective(E, trip, obj, &g);
        CHECK(f0 >= 0);
        double num2 = 0, diff2 = 0, ana2 = 0;
        for (std::size_t i = 0; i < E.size(); ++i) {
          Tensor<double> ep = E, em = E;
          ep[i] += 1e-6;
          em[i] -= 1e-6;
          const double nd = (triplet_objective<double>(ep, trip, obj, nullptr) - triplet_objective<double>(em, trip, obj, nullptr)) / 2e-6;
          num2 += nd * nd;
          ana2 += g[i] * g[i];
          diff2 += (nd - g[i]) * (nd - g[i]);
        }
        if (ana2 == 0 && num2 == 0) continue;
        CHECK(std::sqrt(diff2) / std::sqrt(std::max(num2, ana2)) < 1e-4);
        ++checked;
      }
      CHECK(checked >= 5);
    }
  }

  TEST_CASE("encoder determinism and batch invariance") {
    EncoderConfig cfg;
    cfg.seed = 3;
    ConvEncoder enc(cfg);
    std::mt19937_64 rng(1);
    std::vector<Tensor<float>> xs;
    for (int i = 0; i < 5; ++i) xs.push_back(testing::random_tensor_f({3, 48, 48}, rng, 0, 1));
    xs.push_back(xs[0]);
    const auto big = enc.encode_batch(xs, 64);
    const auto one = enc.encode_batch(xs, 1);
    REQUIRE(big.shape() == Shape{6, 64});
    CHECK(max_abs_diff(big, one) == 0.0f);
    for (int k = 0; k < 64; ++k) CHECK(big[k] == big[5 * 64 + k]);
    const auto e0 = enc.encode(xs[0]);
    for (int k = 0; k < 64; ++k) CHECK(e0[k] == big[k]);
    CHECK_ERRC(enc.encode(Tensor<float>({1, 48, 48})), Errc::kShape);

    const auto back = ConvEncoder::from_container(enc.to_container());
    CHECK(back.checksum() == enc.checksum());
    CHECK(back.encode_batch(xs) == big);
    CHECK_ERRC(ConvEncoder::from_container(Container{}), Errc::kParse);
  }

  TEST_CASE("training with zero epochs returns the initialization") {
    const auto patches = tiny_patches(12, 2);
    EncoderConfig ec;
    ec.seed = 9;
    EmbeddingTrainConfig tc;
    tc.epochs = 0;
    const auto r = train_embedding(patches, ec, tc);
    CHECK(r.encoder.checksum() == ConvEncoder(ec).checksum());
    CHECK_ERRC(train_embedding({}, ec, tc), Errc::kEmptyDataset);
  }

  TEST_CASE("training is deterministic per seed") {
    const auto patches = tiny_patches(24, 4);
    EncoderConfig ec;
    ec.seed = 9;
    EmbeddingTrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 12;
    tc.seed = 5;
    const auto a = train_embedding(patches, ec, tc);
    const auto b = train_embedding(patches, ec, tc);
    CHECK(a.encoder.checksum() == b.encoder.checksum());
    CHECK(a.encoder.checksum() != ConvEncoder(ec).checksum());
    REQUIRE(a.log.size() == 2);
    CHECK(a.log[0].loss == b.log[0].loss);
  }

  TEST_CASE("balanced subsample is capped and class balanced") {
    std::vector<AnnotationVector> anns;
    for (int i = 0; i < 90; ++i) anns.push_back(ann(1, 0.2, 0.5));
    for (int i = 0; i < 10; ++i) anns.push_back(ann(2, 0.2, 0.5));
    const auto idx = balanced_subsample(anns, 40, 3);
    CHECK(idx.size() == 40);
    int c2 = 0;
    for (auto i : idx) c2 += anns[i].class_index == 2;
    CHECK(c2 == 10);
    CHECK(balanced_subsample(anns, 40, 3) == idx);
  }
}
