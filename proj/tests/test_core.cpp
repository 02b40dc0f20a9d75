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

#include <cmath>
#include <random>

#include "annodet/core/container.hpp"
#include "annodet/core/hash.hpp"
#include "annodet/core/image_io.hpp"
#include "annodet/core/keyvalue.hpp"
#include "annodet/core/resample.hpp"
#include "annodet/core/stats.hpp"
#include "support.hpp"

using namespace annodet;

TEST_SUITE("core") {
  TEST_CASE("tensor reshape keeps data and rejects bad sizes") {
    Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
    const auto r = t.reshaped({3, 2});
    CHECK(r.storage() == t.storage());
    CHECK(r.dim(-1) == 2);
    CHECK_ERRC(t.reshaped({4, 2}), Errc::kShape);
    CHECK_ERRC((Tensor<float>({2, 2}, std::vector<float>{1, 2, 3})), Errc::kShape);
  }

  TEST_CASE("container round trip is bit exact") {
    std::mt19937_64 rng(3);
    Container c;
    c.meta = {{"kind", "test"}, {"n", 7}};
    c.tensors.push_back({"a", testing::random_tensor_f({2, 3, 4}, rng)});
    c.tensors.push_back({"b", Tensor<float>({1}, 5.0f)});
    const Container d = decode_container(encode_container(c));
    CHECK(d.meta == c.meta);
    REQUIRE(d.tensors.size() == 2);
    CHECK(d.tensor("a") == c.tensors[0].value);
    CHECK(d.tensor("b") == c.tensors[1].value);
    CHECK_ERRC(d.tensor("zz"), Errc::kParse);
    std::string bytes = encode_container(c);
    CHECK_ERRC(decode_container(bytes.substr(0, bytes.size() - 3)), Errc::kParse);
    CHECK_ERRC(decode_container("nope"), Errc::kParse);
  }

  TEST_CASE("keyvalue parsing") {
    const auto kv = KeyValueConfig::parse("# comment\n a = 1\nb= x y \n\nc = 0.25\nd = true\ne = 1, 2 ,3\n");
    CHECK(kv.get_int("a", 0) == 1);
    CHECK(kv.get_string("b", "") == "x y");
    CHECK(kv.get_double("c", 0) == 0.25);
    CHECK(kv.get_bool("d", false));
    CHECK(kv.get_list("e", {}) == std::vector<std::string>{"1", "2", "3"});
    CHECK(kv.get_int("missing", 9) == 9);
    CHECK_ERRC(kv.get_int("b", 0), Errc::kInvalidConfig);
    CHECK_ERRC(KeyValueConfig::parse("novalue\n"), Errc::kParse);
    const auto again = KeyValueConfig::parse(kv.to_text());
    CHECK(again.values() == kv.values());
  }

  TEST_CASE("fnv1a matches published vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }

  TEST_CASE("stats against hand values") {
    const std::vector<double> xs{1, 2, 3, 4};
    CHECK(mean(xs) == doctest::Approx(2.5));
    CHECK(sample_std(xs) == doctest::Approx(std::sqrt(5.0 / 3.0)));
    const std::vector<double> one{4};
    CHECK(sample_std(one) == 0.0);
    const std::vector<double> tied{10, 20, 20, 30};
    CHECK(average_ranks(tied) == std::vector<double>{1, 2.5, 2.5, 4});
    const std::vector<double> y{1, 4, 9, 16};
    CHECK(spearman(xs, y) == doctest::Approx(1.0));
    const std::vector<double> rev{4, 3, 2, 1};
    CHECK(pearson(xs, rev) == doctest::Approx(-1.0));
  }

  TEST_CASE("spearman equals pearson of average ranks on random data") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> u(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> a(12), b(12);
      for (auto& v : a) v = u(rng);
      for (auto& v : b) v = u(rng);
      // Rank by counting: rank = #less + (#equal + 1) / 2.
      auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r;
        for (double x : v) {
          double less = 0, eq = 0;
          for (double y : v) {
            less += y < x;
            eq += y == x;
          }
          r.push_back(less + (eq + 1) / 2);
        }
        return r;
      };
      const auto ra = ranks(a), rb = ranks(b);
      if (sample_std(ra) == 0 || sample_std(rb) == 0) continue;
      CHECK(spearman(a, b) == doctest::Approx(pearson(ra, rb)).epsilon(1e-12));
    }
  }

  TEST_CASE("bilinear resampling hand cases") {
    Tensor<double> in({1, 1, 2}, std::vector<double>{0, 1});
    const auto out = resize_bilinear(in, 1, 3, true);
    REQUIRE(out.shape() == Shape{1, 1, 3});
    CHECK(std::abs(out[0] - 0.0) < 1e-9);
    CHECK(std::abs(out[1] - 0.5) < 1e-9);
    CHECK(std::abs(out[2] - 1.0) < 1e-9);

    std::mt19937_64 rng(5);
    const auto x = testing::random_tensor({3, 5, 4}, rng);
    CHECK(resize_bilinear(x, 5, 4, true) == x);
    CHECK(resize_bilinear(x, 5, 4, false) == x);

    const Tensor<double> c({2, 3, 7}, 0.3);
    for (int h : {1, 2, 5, 11})
      for (int w : {1, 3, 8}) {
        const auto r = resize_bilinear(c, h, w, true);
        for (double v : r.values()) CHECK(v == 0.3);
      }
    CHECK_ERRC(resize_bilinear(x, 0, 2, true), Errc::kShape);
  }

  TEST_CASE("png round trip quantizes to 8 bits") {
    const auto dir = testing::scratch_dir("png");
    std::mt19937_64 rng(2);
    const auto img = testing::random_tensor_f({3, 6, 5}, rng, 0, 1);
    write_png(dir / "x.png", img);
    const auto back = read_png(dir / "x.png");
    REQUIRE(back.shape() == img.shape());
    CHECK(max_abs_diff(back, img) <= 0.5f / 255.0f + 1e-6f);
    CHECK_ERRC(read_png(dir / "missing.png"), Errc::kIo);
  }
}
