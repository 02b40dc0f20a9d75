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

#include <map>
#include <random>

#include "annodet/core/container.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace annodet;
using namespace annodet::dataset;

namespace {

// Fraction of box `b` covered by window `w`, by counting unit cells.
double covered_fraction(const Box& b, const Box& w) {
  long in = 0, all = 0;
  for (int y = int(b.y_min); y < int(b.y_max); ++y)
    for (int x = int(b.x_min); x < int(b.x_max); ++x) {
      ++all;
      in += x >= w.x_min && x + 1 <= w.x_max && y >= w.y_min && y + 1 <= w.y_max;
    }
  return double(in) / double(all);
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("annotation hand cases") {
    const auto sq = compute_annotation({0, 0, 150, 150}, 1, 300);
    CHECK(sq.squareness == 1.0);
    const auto full = compute_annotation({0, 0, 300, 300}, 2, 300);
    CHECK(full.area_norm == 1.0);
    CHECK(full.squareness == 1.0);
    const auto r = compute_annotation({10, 20, 110, 70}, 1, 300);
    CHECK(r.area_norm == doctest::Approx(5000.0 / 90000.0).epsilon(1e-15));
    CHECK(r.squareness == 0.5);
    CHECK(r.class_index == 1);
    CHECK_FALSE(r.is_background);
    CHECK_ERRC(compute_annotation({5, 5, 5, 9}, 1, 300), Errc::kInvalidBox);
    CHECK_ERRC(compute_annotation({5, 9, 8, 2}, 1, 300), Errc::kInvalidBox);
  }

  TEST_CASE("background annotation is the fixed point for every size") {
    const auto bg = AnnotationVector::background();
    CHECK(bg.class_index == 0);
    CHECK(bg.area_norm == 1.0);
    CHECK(bg.squareness == 1.0);
    CHECK(bg.is_background);
    for (int side : {16, 48, 300}) {
      Scene s = testing::blank_scene("bg", side, side);
      const auto patches = tile_scene(s, {side, 8, 0.05});
      REQUIRE(patches.size() == 1);
      CHECK(patches[0].annotation == bg);
    }
  }

  TEST_CASE("tile_scene single centered object") {
    Scene s = testing::blank_scene("one", 48, 48);
    s.boxes.push_back({14, 16, 34, 30});
    s.labels.push_back(2);
    const auto patches = tile_scene(s, {48, 16, 0.05});
    REQUIRE(patches.size() == 1);
    CHECK(patches[0].annotation == compute_annotation(s.boxes[0], 2, 48));
    CHECK(patches[0].object_label == 2);
  }

  TEST_CASE("tile_scene on an empty scene emits only background") {
    const Scene s = testing::blank_scene("empty", 96, 80);
    const auto patches = tile_scene(s, {48, 16, 0.05});
    CHECK(patches.size() == oracle::windows(96, 80, 48, 16).size());
    for (const auto& p : patches) CHECK(p.annotation.is_background);
  }

  TEST_CASE("tile_scene rejects scenes smaller than the patch") {
    const Scene s = testing::blank_scene("small", 40, 100);
    CHECK_ERRC(tile_scene(s, {48, 16, 0.05}), Errc::kUnsupportedGeometry);
  }

  TEST_CASE("tile_scene matches brute-force window enumeration") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 12; ++trial) {
      const bool big = trial == 0;
      const int H = big ? 600 : 96 + 16 * int(rng() % 4), W = big ? 600 : 96 + 16 * int(rng() % 4);
      const int side = big ? 300 : 48, stride = big ? 50 : 16;
      Scene s = testing::blank_scene("t" + std::to_string(trial), H, W);
      const int n_obj = big ? 3 : 1 + int(rng() % 4);
      const int max_sz = big ? 120 : 30;
      for (int k = 0; k < n_obj; ++k) {
        const int w = 6 + int(rng() % (max_sz - 5)), h = 6 + int(rng() % (max_sz - 5));
        int x, y;
        if (big) {
          // Three disjoint boxes in separate bands.
          x = 20 + 190 * k + int(rng() % 40);
          y = 40 + int(rng() % 400);
        } else {
          x = int(rng() % (W - w));
          y = int(rng() % (H - h));
        }
        s.boxes.push_back({double(x), double(y), double(x + w), double(y + h)});
        s.labels.push_back(1 + k % 3);
      }
      const auto patches = tile_scene(s, {side, stride, 0.05});

      std::map<std::pair<int, int>, int> expected;  // window -> box index or -1
      for (const auto& [y, x] : oracle::windows(H, W, side, stride)) {
        const Box win{double(x), double(y), double(x + side), double(y + side)};
        int inside = -1, n_in = 0;
        bool clutter = false;
        for (std::size_t i = 0; i < s.boxes.size(); ++i) {
          const double f = covered_fraction(s.boxes[i], win);
          if (f == 1.0) {
            inside = int(i);
            ++n_in;
          } else if (f > 0.05) {
            clutter = true;
          }
        }
        if (!clutter && n_in <= 1) expected[{y, x}] = inside;
      }
      REQUIRE(patches.size() == expected.size());
      int objects = 0;
      for (const auto& p : patches) {
        const auto it = expected.find({p.origin_y, p.origin_x});
        REQUIRE(it != expected.end());
        if (it->second < 0) {
          CHECK(p.annotation.is_background);
        } else {
          ++objects;
          CHECK(p.object_box == s.boxes[it->second]);
          CHECK(p.annotation == compute_annotation(p.object_box, p.object_label, side));
        }
      }
      if (big) CHECK(objects >= 3);
    }
  }

  TEST_CASE("stratified split counts") {
    std::vector<int> keys(100);
    for (int i = 0; i < 100; ++i) keys[i] = i < 50 ? 1 : 2;
    const auto sp = stratified_split(keys, {0.6, 0.2, 0.2, 9});
    int c1 = 0, c2 = 0;
    for (auto i : sp.train) (keys[i] == 1 ? c1 : c2)++;
    CHECK(c1 == 30);
    CHECK(c2 == 30);
    const auto again = stratified_split(keys, {0.6, 0.2, 0.2, 9});
    CHECK(again.train == sp.train);
    CHECK(again.val == sp.val);
    CHECK(again.test == sp.test);
    CHECK_ERRC(stratified_split(keys, {1.0, 0.0, 0.0, 0}), Errc::kInvalidRatio);
    CHECK_ERRC(stratified_split(keys, {0.5, 0.2, 0.2, 0}), Errc::kInvalidRatio);
    CHECK_ERRC(stratified_split({1, 1, 2, 2, 2}, {0.6, 0.2, 0.2, 0}), Errc::kStratificationInfeasible);
  }

  TEST_CASE("stratified split partitions the input and keeps class ratios") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 40; ++trial) {
      const int n_cls = 1 + int(rng() % 4);
      std::vector<int> keys;
      std::map<int, int> total;
      for (int c = 0; c < n_cls; ++c) {
        const int n = 4 + int(rng() % 40);
        for (int i = 0; i < n; ++i) keys.push_back(c);
        total[c] = n;
      }
      std::shuffle(keys.begin(), keys.end(), rng);
      const SplitSpec spec{0.5 + 0.2 * double(rng() % 3) / 2, 0, 0, rng()};
      SplitSpec s2 = spec;
      s2.val = (1 - spec.train) / 2;
      s2.test = 1 - spec.train - s2.val;
      const auto sp = stratified_split(keys, s2);
      std::vector<std::size_t> all = sp.train;
      all.insert(all.end(), sp.val.begin(), sp.val.end());
      all.insert(all.end(), sp.test.begin(), sp.test.end());
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> expect(keys.size());
      std::iota(expect.begin(), expect.end(), 0);
      CHECK(all == expect);
      const std::array<const std::vector<std::size_t>*, 3> parts{&sp.train, &sp.val, &sp.test};
      const std::array<double, 3> ratio{s2.train, s2.val, s2.test};
      for (int c = 0; c < n_cls; ++c)
        for (int k = 0; k < 3; ++k) {
          int got = 0;
          for (auto i : *parts[k]) got += keys[i] == c;
          CHECK(std::abs(got - ratio[k] * total[c]) <= 1.0 + 1e-9);
          CHECK(got >= 1);
        }
    }
  }

  TEST_CASE("generator determinism and class balance") {
    GeneratorConfig cfg;
    cfg.n_scenes = 200;
    const auto a = generate_synthetic_scenes(cfg, 4);
    const auto b = generate_synthetic_scenes(cfg, 4);
    REQUIRE(a.size() == 200);
    std::map<int, int> hist;
    long total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].boxes == b[i].boxes);
      CHECK(a[i].labels == b[i].labels);
      validate_scene(a[i]);
      for (int l : a[i].labels) {
        ++hist[l];
        ++total;
      }
    }
    REQUIRE(hist.size() == 3);
    for (const auto& [l, n] : hist) CHECK(std::abs(n - total / 3.0) <= 0.2 * total / 3.0);

    cfg.objects_min = cfg.objects_max = 0;
    cfg.n_scenes = 5;
    for (const auto& s : generate_synthetic_scenes(cfg, 1)) CHECK(s.boxes.empty());
    cfg.size_max = 500;
    CHECK_ERRC(generate_synthetic_scenes(cfg, 1), Errc::kInvalidConfig);
  }

  TEST_CASE("manifest round trip and validation") {
    const auto dir = testing::scratch_dir("manifest");
    GeneratorConfig cfg;
    cfg.n_scenes = 4;
    const auto scenes = generate_synthetic_scenes(cfg, 2);
    save_manifest(scenes, dir / "m.json");
    const auto back = load_manifest(dir / "m.json");
    REQUIRE(back.size() == scenes.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].id == scenes[i].id);
      CHECK(back[i].boxes == scenes[i].boxes);
      CHECK(back[i].labels == scenes[i].labels);
      CHECK(max_abs_diff(back[i].image, scenes[i].image) <= 0.5f / 255.0f + 1e-6f);
    }
    save_manifest(back, dir / "m2.json");
    const auto again = load_manifest(dir / "m2.json");
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(again[i].image == back[i].image);

    CHECK(parse_manifest("", dir).empty());
    CHECK(parse_manifest("{\"scenes\": []}", dir).empty());
    const std::string bad =
        R"({"scenes":[{"id":"sc7","image":"x.png","width":10,"height":10,
            "boxes":[{"x_min":5,"y_min":1,"x_max":2,"y_max":4,"label":1}]}]})";
    try {
      parse_manifest(bad, dir, false);
      FAIL("expected a validation error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kValidation);
      CHECK(std::string(e.what()).find("sc7") != std::string::npos);
    }
    try {
      parse_manifest("{\"scenes\": [\n{\"id\": 3,,}]}", dir, false);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kParse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_ERRC(parse_manifest(R"({"scenes":[{"image":"x.png","width":1,"height":1}]})", dir, false), Errc::kParse);
  }

  TEST_CASE("scene class key is the majority label") {
    Scene s = testing::blank_scene("k", 8, 8);
    s.labels = {2, 3, 3};
    CHECK(scene_class_key(s) == 3);
    s.labels = {};
    CHECK(scene_class_key(s) == 0);
  }
}
