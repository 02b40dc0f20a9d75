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

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "annodet/core/container.hpp"
#include "annodet/dataset/dataset.hpp"
#include "annodet/nn/parameters.hpp"

namespace annodet::embedding {

using dataset::AnnotationVector;

/// Anything that maps 3xSxS patches to fixed-length embeddings. Grid
/// extraction and fusion only see this interface, so a pretrained external
/// encoder can stand in for the default convolutional one.
class PatchEncoder {
 public:
  virtual ~PatchEncoder() = default;
  virtual std::string architecture_id() const = 0;
  virtual int latent_dim() const = 0;
  /// Spatial size the network consumes; other patch sizes are bilinearly resized.
  virtual int input_size() const = 0;
  virtual bool frozen() const = 0;
  virtual std::uint64_t checksum() const = 0;
  /// Encodes every patch, returning an [N, latent_dim] tensor. Deterministic
  /// and independent of `batch_size`.
  virtual Tensor<float> encode_batch(std::span<const Tensor<float>> patches, int batch_size = 64) const = 0;

  Tensor<float> encode(const Tensor<float>& pixels) const;
};

struct EncoderConfig {
  int latent_dim = 64;
  int input_size = 32;
  std::vector<int> widths{16, 32, 64, 64};
  std::uint64_t seed = 0;
};

/// Four conv3x3-ReLU-maxpool blocks, global average pooling, linear head.
class ConvEncoder final : public PatchEncoder {
 public:
  static constexpr const char* kArchitecture = "conv4-gap-linear";

  explicit ConvEncoder(const EncoderConfig& config);

  std::string architecture_id() const override { return kArchitecture; }
  int latent_dim() const override { return config_.latent_dim; }
  int input_size() const override { return config_.input_size; }
  bool frozen() const override { return frozen_; }
  std::uint64_t checksum() const override;
  Tensor<float> encode_batch(std::span<const Tensor<float>> patches, int batch_size = 64) const override;

  void freeze();
  const EncoderConfig& config() const { return config_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }

  /// Network input: [N,3,S,S] at input_size; returns [N, latent_dim].
  nn::Var<float> forward(const Tensor<float>& batch) const;
  /// Resizes one patch to input_size and normalises it.
  Tensor<float> prepare(const Tensor<float>& pixels) const;

  Container to_container() const;
  static ConvEncoder from_container(const Container& c);
  void save(const std::filesystem::path& path) const;
  static ConvEncoder load(const std::filesystem::path& path);

 private:
  EncoderConfig config_;
  nn::ParameterSet<float> params_;
  bool frozen_ = false;
};

struct AnnotationWeights {
  double w_class = 1.0;
  double w_area = 1.0;
  double w_square = 1.0;

  void validate() const;
};

double annotation_distance(const AnnotationVector& a, const AnnotationVector& b, const AnnotationWeights& w);

/// Hinge value with its subgradient w.r.t. the two embedding distances.
struct LossValue {
  double value = 0.0;
  double d_ap = 0.0;
  double d_an = 0.0;
};

/// max(0, d_ap - d_an + margin)
LossValue dtl_loss(double d_ap, double d_an, double margin);
/// max(0, d_ap - d_an + margin_scale * (ann_an - ann_ap)); requires ann_an > ann_ap.
LossValue matl_loss(double d_ap, double d_an, double ann_ap, double ann_an, double margin_scale);

enum class LossKind { kDtl, kMatl };
enum class MiningMode { kAll, kSemiHard };

LossKind parse_loss_kind(const std::string& s);
MiningMode parse_mining_mode(const std::string& s);

struct Triplet {
  int anchor = 0;
  int positive = 0;
  int negative = 0;
  double ann_ap = 0.0;
  double ann_an = 0.0;
};

/// Margin used by semi-hard mining: fixed for DTL, annotation-gap scaled for MATL.
struct MarginRule {
  LossKind kind = LossKind::kMatl;
  double dtl_margin = 0.5;
  double margin_scale = 1.0;

  double margin(double ann_ap, double ann_an) const {
    return kind == LossKind::kDtl ? dtl_margin : margin_scale * (ann_an - ann_ap);
  }
};

double euclidean(std::span<const float> a, std::span<const float> b);

struct TripletObjective {
  LossKind kind = LossKind::kMatl;
  double dtl_margin = 0.5;
  double margin_scale = 1.0;
};

/// Mean triplet loss over `triplets` for embeddings [N, D]. When `grad` is
/// given it receives d(loss)/d(embeddings), shaped like `embeddings`.
template <typename T>
double triplet_objective(const Tensor<T>& embeddings, const std::vector<Triplet>& triplets,
                         const TripletObjective& obj, Tensor<T>* grad);

/// Ordered triplets (a, p, n) with annotation_distance(a,p) < annotation_distance(a,n).
/// `embeddings` is [N, D] with rows aligned to `annotations`.
std::vector<Triplet> mine_triplets(const Tensor<float>& embeddings,
                                   const std::vector<AnnotationVector>& annotations,
                                   const AnnotationWeights& w, MiningMode mode, const MarginRule& rule);

struct EmbeddingTrainConfig {
  LossKind loss = LossKind::kMatl;
  MiningMode mining = MiningMode::kSemiHard;
  AnnotationWeights weights;
  double dtl_margin = 0.5;
  double margin_scale = 1.0;
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  int max_patches = 0;  // class-balanced subsample cap; 0 keeps everything
  std::uint64_t seed = 0;
};

struct TrainLogEntry {
  int epoch = 0;
  double loss = 0.0;
  long triplets = 0;
};

struct EmbeddingTrainResult {
  ConvEncoder encoder;
  std::vector<TrainLogEntry> log;
};

/// Deterministic round-robin-over-classes subsample of at most `max_items`.
std::vector<std::size_t> balanced_subsample(const std::vector<AnnotationVector>& annotations,
                                            std::size_t max_items, std::uint64_t seed);

EmbeddingTrainResult train_embedding(const std::vector<dataset::Patch>& patches, const EncoderConfig& encoder,
                                     const EmbeddingTrainConfig& config);

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

}  // namespace annodet::embedding
