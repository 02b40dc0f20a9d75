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
#include <random>

#include "annodet/core/error.hpp"
#include "annodet/core/hash.hpp"
#include "annodet/core/resample.hpp"
#include "annodet/embedding/embedding.hpp"
#include "annodet/nn/ops.hpp"

namespace annodet::embedding {

Tensor<float> PatchEncoder::encode(const Tensor<float>& pixels) const {
  Tensor<float> out = encode_batch(std::span<const Tensor<float>>(&pixels, 1), 1);
  return out.reshaped({latent_dim()});
}

ConvEncoder::ConvEncoder(const EncoderConfig& config) : config_(config) {
  require(config.latent_dim >= 1, Errc::kInvalidConfig, "latent_dim must be >= 1");
  require(config.widths.size() == 4, Errc::kInvalidConfig, "the encoder has exactly four conv blocks");
  require(config.input_size >= 16 && config.input_size % 16 == 0, Errc::kInvalidConfig,
          "encoder input_size must be a positive multiple of 16");
  std::mt19937_64 rng(config.seed);
  int cin = 3;
  for (std::size_t b = 0; b < config.widths.size(); ++b) {
    const int cout = config.widths[b];
    const std::string p = "block" + std::to_string(b);
    params_.add(p + ".w", nn::he_normal<float>({cout, cin, 3, 3}, cin * 9, rng));
    params_.add(p + ".b", Tensor<float>({cout}));
    cin = cout;
  }
  params_.add("head.w", nn::normal_init<float>({config.latent_dim, cin}, 1.0 / std::sqrt(double(cin)), rng));
  params_.add("head.b", Tensor<float>({config.latent_dim}));
}

void ConvEncoder::freeze() {
  frozen_ = true;
  params_.set_trainable(false);
}

std::uint64_t ConvEncoder::checksum() const {
  Fnv1a h;
  h.update(kArchitecture);
  for (const auto& [name, v] : params_.items()) {
    h.update(name);
    const auto& s = v.value().shape();
    h.update(s.data(), s.size() * sizeof(int));
    h.update(v.value().data(), v.value().size() * sizeof(float));
  }
  return h.digest();
}

Tensor<float> ConvEncoder::prepare(const Tensor<float>& pixels) const {
  require(pixels.rank() == 3 && pixels.dim(0) == 3, Errc::kShape,
          "encoder expects a 3xSxS patch, got " + shape_str(pixels.shape()));
  const int S = config_.input_size;
  Tensor<float> x = (pixels.dim(1) == S && pixels.dim(2) == S) ? pixels : resize_bilinear(pixels, S, S, false);
  for (auto& v : x.storage()) v = (v - 0.5f) * 4.0f;
  return x;
}

nn::Var<float> ConvEncoder::forward(const Tensor<float>& batch) const {
  using nn::Var;
  Var<float> x = Var<float>::constant(batch);
  for (std::size_t b = 0; b < config_.widths.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    x = nn::max_pool2(nn::relu(nn::conv2d(x, params_.get(p + ".w"), params_.get(p + ".b"), 1, 1)));
  }
  x = nn::global_avg_pool(x);
  // The head runs per sample as a 1x1 conv so an embedding never depends on
  // its position inside the batch (a batched GEMM rounds rows differently).
  const int N = x.shape()[0], F = x.shape()[1], D = config_.latent_dim;
  const auto w = nn::reshape(params_.get("head.w"), {D, F, 1, 1});
  const auto y = nn::conv2d(nn::reshape(x, {N, F, 1, 1}), w, params_.get("head.b"), 1, 0);
  return nn::reshape(y, {N, D});
}

Tensor<float> ConvEncoder::encode_batch(std::span<const Tensor<float>> patches, int batch_size) const {
  require(batch_size >= 1, Errc::kInvalidConfig, "batch_size must be >= 1");
  nn::NoGradGuard no_grad;
  const int N = static_cast<int>(patches.size());
  const int S = config_.input_size, D = config_.latent_dim;
  Tensor<float> out({N, D});
  const std::size_t per = std::size_t(3) * S * S;
  for (int start = 0; start < N; start += batch_size) {
    const int n = std::min(batch_size, N - start);
    Tensor<float> batch({n, 3, S, S});
    for (int i = 0; i < n; ++i) {
      const Tensor<float> x = prepare(patches[start + i]);
      std::copy(x.storage().begin(), x.storage().end(), batch.data() + i * per);
    }
    const auto e = forward(batch);
    std::copy(e.value().storage().begin(), e.value().storage().end(), out.data() + std::size_t(start) * D);
  }
  return out;
}

Container ConvEncoder::to_container() const {
  Container c;
  c.meta = {{"kind", "encoder"},
            {"architecture_id", kArchitecture},
            {"latent_dim", config_.latent_dim},
            {"input_size", config_.input_size},
            {"widths", config_.widths},
            {"seed", config_.seed},
            {"frozen", frozen_}};
  for (const auto& [name, v] : params_.items()) c.tensors.push_back({name, v.value()});
  return c;
}

ConvEncoder ConvEncoder::from_container(const Container& c) {
  require(c.meta.value("kind", "") == "encoder", Errc::kParse, "container is not an encoder checkpoint");
  const std::string arch = c.meta.value("architecture_id", "");
  require(arch == kArchitecture, Errc::kParse, "unknown encoder architecture '" + arch + "'");
  EncoderConfig cfg;
  cfg.latent_dim = c.meta.at("latent_dim").get<int>();
  cfg.input_size = c.meta.at("input_size").get<int>();
  cfg.widths = c.meta.at("widths").get<std::vector<int>>();
  cfg.seed = c.meta.value("seed", std::uint64_t{0});
  ConvEncoder enc(cfg);
  for (auto [name, handle] : enc.params_.items()) {
    const auto& t = c.tensor(name);
    require(t.shape() == handle.value().shape(), Errc::kShape, "encoder tensor " + name + " has the wrong shape");
    handle.mutable_value() = t;
  }
  if (c.meta.value("frozen", false)) enc.freeze();
  return enc;
}

void ConvEncoder::save(const std::filesystem::path& path) const { write_container(path, to_container()); }

ConvEncoder ConvEncoder::load(const std::filesystem::path& path) { return from_container(read_container(path)); }

}  // namespace annodet::embedding
