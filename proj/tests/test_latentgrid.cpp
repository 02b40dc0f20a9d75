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

#include "annodet/embedding/embedding.hpp"
#include "annodet/latentgrid/latentgrid.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace annodet;
using namespace annodet::latentgrid;

namespace {

embedding::ConvEncoder frozen_encoder(std::uint64_t seed = 1) {
  embedding::EncoderConfig cfg;
  cfg.seed = seed;
  cfg.latent_dim = 16;
  embedding::ConvEncoder enc(cfg);
  enc.freeze();
  return enc;
}

std::pair<int, int> oracle_shape(int h, int w, int window, int stride) {
  std::set<int> ys, xs;
  for (const auto& [y, x] : oracle::windows(h, w, window, stride)) {
    ys.insert(y);
    xs.insert(x);
  }
  return {int(ys.size()), int(xs.size())};
}

}  // namespace

TEST_SUITE("latentgrid") {
  TEST_CASE("grid shape hand case and randomized oracle") {
    CHECK(grid_shape(600, 600, 300, 50) == std::pair{7, 7});
    std::mt19937_64 rng(12);
    for (int t = 0; t < 300; ++t) {
      const int h = 1 + int(rng() % 120), w = 1 + int(rng() % 120);
      const int window = 1 + int(rng() % std::min(h, w)), stride = 1 + int(rng() % 40);
      CHECK(grid_shape(h, w, window, stride) == oracle_shape(h, w, window, stride));
    }
    CHECK_ERRC(grid_shape(10, 10, 11, 1), Errc::kUnsupportedGeometry);
    CHECK_ERRC(grid_shape(10, 10, 5, 0), Errc::kUnsupportedGeometry);
  }

  TEST_CASE("extract_grid geometry and degenerate cases") {
    const auto enc = frozen_encoder();
    std::mt19937_64 rng(4);
    dataset::Scene big = testing::blank_scene("big", 600, 600);
    big.image = testing::random_tensor_f({3, 600, 600}, rng, 0, 1);
    const auto g = extract_grid(big, enc, 300, 50);
    CHECK(g.rows() == 7);
    CHECK(g.cols() == 7);
    CHECK(g.depth() == 16);
    CHECK(g.encoder_checksum == enc.checksum());

    dataset::Scene sq = testing::blank_scene("sq", 40, 40);
    sq.image = testing::random_tensor_f({3, 40, 40}, rng, 0, 1);
    const auto one = extract_grid(sq, enc, 40, 8);
    REQUIRE(one.rows() == 1);
    REQUIRE(one.cols() == 1);
    const auto e = enc.encode(sq.image);
    for (int d = 0; d < 16; ++d) CHECK(one.values[d] == e[d]);

    const auto flat = extract_grid(testing::blank_scene("c", 96, 80, 0.4f), enc, 32, 8);
    for (int d = 0; d < flat.depth(); ++d)
      for (int i = 0; i < flat.rows(); ++i)
        for (int j = 0; j < flat.cols(); ++j) CHECK(std::abs(flat.values.at(d, i, j) - flat.values.at(d, 0, 0)) <= 1e-6f);

    CHECK_ERRC(extract_grid(sq, enc, 48, 8), Errc::kUnsupportedGeometry);
    embedding::EncoderConfig cfg;
    cfg.latent_dim = 16;
    CHECK_ERRC(extract_grid(sq, embedding::ConvEncoder(cfg), 32, 8), Errc::kConfiguration);
  }

  TEST_CASE("shifting the scene by one stride shifts the grid by one cell") {
    const auto enc = frozen_encoder(6);
    std::mt19937_64 rng(9);
    const int H = 64, W = 96, stride = 8, window = 32;
    const auto base = testing::random_tensor_f({3, H, W + stride}, rng, 0, 1);
    dataset::Scene a = testing::blank_scene("a", H, W), b = testing::blank_scene("b", H, W);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          a.image.at(c, y, x) = base.at(c, y, x);
          b.image.at(c, y, x) = base.at(c, y, x + stride);
        }
    const auto ga = extract_grid(a, enc, window, stride), gb = extract_grid(b, enc, window, stride);
    for (int d = 0; d < ga.depth(); ++d)
      for (int i = 0; i < ga.rows(); ++i)
        for (int j = 0; j + 1 < ga.cols(); ++j) CHECK(std::abs(gb.values.at(d, i, j) - ga.values.at(d, i, j + 1)) <= 1e-6f);
  }

  TEST_CASE("resample identities") {
    LatentGrid g;
    g.values = Tensor<float>({1, 1, 2}, std::vector<float>{0, 1});
    const auto r = resample_grid(g, {1, 3, true});
    CHECK(std::abs(r[0] - 0.0) < 1e-9);
    CHECK(std::abs(r[1] - 0.5) < 1e-9);
    CHECK(std::abs(r[2] - 1.0) < 1e-9);

    std::mt19937_64 rng(3);
    g.values = testing::random_tensor_f({4, 6, 5}, rng);
    CHECK(resample_grid(g, {6, 5, true}) == g.values);

    LatentGrid c;
    c.values = Tensor<float>({2, 5, 5}, 0.7f);
    const auto down = resample_grid(c, {2, 3, true});
    LatentGrid mid;
    mid.values = down;
    const auto up = resample_grid(mid, {9, 11, true});
    for (float v : up.values()) CHECK(v == 0.7f);
    const auto wide = resample_grid(c, {32, 17, false});
    for (float v : wide.values()) CHECK(v == 0.7f);
  }

  TEST_CASE("resampled values stay inside the per-channel input range") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 100; ++t) {
      LatentGrid g;
      const int D = 1 + int(rng() % 4);
      g.values = testing::random_tensor_f({D, 1 + int(rng() % 7), 1 + int(rng() % 7)}, rng, -3, 3);
      const ResampleSpec spec{1 + int(rng() % 20), 1 + int(rng() % 20), bool(rng() % 2)};
      const auto out = resample_grid(g, spec);
      const int n_in = g.rows() * g.cols(), n_out = spec.target_h * spec.target_w;
      for (int d = 0; d < D; ++d) {
        const auto lo = *std::min_element(g.values.data() + d * n_in, g.values.data() + (d + 1) * n_in);
        const auto hi = *std::max_element(g.values.data() + d * n_in, g.values.data() + (d + 1) * n_in);
        for (int k = 0; k < n_out; ++k) {
          CHECK(out[d * n_out + k] >= lo);
          CHECK(out[d * n_out + k] <= hi);
        }
      }
    }
  }

  TEST_CASE("grid file round trip and cache") {
    const auto dir = testing::scratch_dir("grids");
    const auto enc = frozen_encoder(2);
    std::mt19937_64 rng(4);
    dataset::Scene s = testing::blank_scene("scene_1", 48, 48);
    s.image = testing::random_tensor_f({3, 48, 48}, rng, 0, 1);
    const auto g = extract_grid(s, enc, 32, 8);
    const auto back = decode_grid(encode_grid(g));
    CHECK(back.values == g.values);
    CHECK(back.scene_id == g.scene_id);
    CHECK(back.window == 32);
    CHECK(back.stride == 8);
    CHECK(back.encoder_checksum == g.encoder_checksum);
    CHECK_ERRC(decode_grid("XXXX"), Errc::kParse);
    const auto bytes = encode_grid(g);
    CHECK_ERRC(decode_grid(bytes.substr(0, bytes.size() - 1)), Errc::kParse);

    GridCache cache(dir);
    const auto first = cache.get_or_extract(s, enc, 32, 8);
    const auto second = cache.get_or_extract(s, enc, 32, 8);
    CHECK(cache.misses() == 1);
    CHECK(cache.hits() == 1);
    CHECK(second.values == first.values);
    CHECK_FALSE(cache.lookup(s.id, enc.checksum() + 1, 32, 8).has_value());
  }
}
