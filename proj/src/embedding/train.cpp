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
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "annodet/core/error.hpp"
#include "annodet/embedding/embedding.hpp"
#include "annodet/nn/ops.hpp"

namespace annodet::embedding {

std::vector<std::size_t> balanced_subsample(const std::vector<AnnotationVector>& annotations,
                                            std::size_t max_items, std::uint64_t seed) {
  std::vector<std::size_t> all(annotations.size());
  std::iota(all.begin(), all.end(), 0);
  if (max_items == 0 || max_items >= annotations.size()) return all;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < annotations.size(); ++i) by_class[annotations[i].class_index].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& [_, idx] : by_class) std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; out.size() < max_items; ++k) {
    bool any = false;
    for (auto& [_, idx] : by_class) {
      if (k < idx.size() && out.size() < max_items) {
        out.push_back(idx[k]);
        any = true;
      }
    }
    if (!any) break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

EmbeddingTrainResult train_embedding(const std::vector<dataset::Patch>& patches, const EncoderConfig& encoder_cfg,
                                     const EmbeddingTrainConfig& config) {
  require(!patches.empty(), Errc::kEmptyDataset, "no patches to train the embedding on");
  require(config.batch_size >= 3, Errc::kInvalidConfig, "embedding batch_size must be >= 3");
  require(config.epochs >= 0, Errc::kInvalidConfig, "epochs must be >= 0");
  const AnnotationWeights weights =
      config.loss == LossKind::kDtl ? AnnotationWeights{1.0, 0.0, 0.0} : config.weights;
  weights.validate();
  const MarginRule rule{config.loss, config.dtl_margin, config.margin_scale};
  const TripletObjective objective{config.loss, config.dtl_margin, config.margin_scale};

  EmbeddingTrainResult result{ConvEncoder(encoder_cfg), {}};
  ConvEncoder& enc = result.encoder;
  if (config.epochs == 0) return result;

  std::vector<AnnotationVector> all_ann;
  all_ann.reserve(patches.size());
  for (const auto& p : patches) all_ann.push_back(p.annotation);
  const auto chosen = balanced_subsample(all_ann, static_cast<std::size_t>(std::max(config.max_patches, 0)),
                                         config.seed ^ 0x5bd1e995ULL);

  const int S = enc.input_size();
  const std::size_t per = std::size_t(3) * S * S;
  std::vector<Tensor<float>> inputs;
  std::vector<AnnotationVector> anns;
  inputs.reserve(chosen.size());
  for (std::size_t i : chosen) {
    inputs.push_back(enc.prepare(patches[i].pixels));
    anns.push_back(patches[i].annotation);
  }

  nn::Adam<float> opt(enc.params(), nn::AdamOptions{config.lr, 0.9, 0.999, 1e-8, 0.0, 5.0});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    long triplet_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start + 3 <= order.size(); start += config.batch_size) {
      const int n = static_cast<int>(std::min<std::size_t>(config.batch_size, order.size() - start));
      Tensor<float> batch({n, 3, S, S});
      std::vector<AnnotationVector> batch_ann(n);
      for (int i = 0; i < n; ++i) {
        const auto& x = inputs[order[start + i]];
        std::copy(x.storage().begin(), x.storage().end(), batch.data() + i * per);
        batch_ann[i] = anns[order[start + i]];
      }
      auto emb = enc.forward(batch);
      const auto& E = emb.value();
      const auto triplets = mine_triplets(E, batch_ann, weights, config.mining, rule);
      ++batches;
      if (triplets.empty()) continue;

      Tensor<float> grad;
      const double loss = triplet_objective(E, triplets, objective, &grad);
      loss_sum += loss;
      triplet_sum += static_cast<long>(triplets.size());
      if (loss <= 0) continue;
      emb.backward(grad);
      opt.step();
      enc.params().zero_grad();
    }
    result.log.push_back({epoch, batches ? loss_sum / batches : 0.0, triplet_sum});
  }
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::kIo, "cannot write " + path.string());
  os << "epoch,loss,triplets\n";
  for (const auto& e : log) os << e.epoch << ',' << e.loss << ',' << e.triplets << '\n';
}

}  // namespace annodet::embedding
