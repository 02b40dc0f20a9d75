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

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "annodet/nn/autograd.hpp"

namespace annodet::nn {

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    require(!index_.contains(name), Errc::kConfiguration, "duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, Var<T>::parameter(std::move(init)));
    return items_.back().second;
  }

  /// Registers an existing handle; both sets then share the tensor.
  void adopt(const std::string& name, const Var<T>& v) {
    require(!index_.contains(name), Errc::kConfiguration, "duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, v);
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Var<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), Errc::kConfiguration, "missing parameter " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, v] : items_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : items_) v.zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& [_, v] : items_) v.node()->requires_grad = trainable;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
Tensor<T> he_normal(Shape shape, int fan_in, std::mt19937_64& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / std::max(fan_in, 1)));
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamOptions opts) : params_(&params), opts_(opts) {
    for (const auto& [_, v] : params.items()) {
      m_.emplace_back(v.value().size(), 0.0);
      s_.emplace_back(v.value().size(), 0.0);
    }
  }

  void step(double lr_scale = 1.0) {
    ++t_;
    double clip = 1.0;
    if (opts_.clip_norm > 0) {
      double sq = 0;
      for (const auto& [_, v] : params_->items())
        for (T g : v.grad().values()) sq += double(g) * double(g);
      const double norm = std::sqrt(sq);
      if (norm > opts_.clip_norm) clip = opts_.clip_norm / norm;
    }
    const double lr = opts_.lr * lr_scale;
    const double bc1 = 1.0 - std::pow(opts_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, double(t_));
    std::size_t k = 0;
    for (auto& [_, v] : params_->items()) {
      auto& m = m_[k];
      auto& s = s_[k];
      ++k;
      if (!v.requires_grad() || v.grad().empty()) continue;
      auto& w = v.mutable_value();
      const auto& g = v.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = double(g[i]) * clip + opts_.weight_decay * double(w[i]);
        m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * gi;
        s[i] = opts_.beta2 * s[i] + (1 - opts_.beta2) * gi * gi;
        w[i] -= static_cast<T>(lr * (m[i] / bc1) / (std::sqrt(s[i] / bc2) + opts_.eps));
      }
    }
  }

  long steps() const { return t_; }

 private:
  ParameterSet<T>* params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, s_;
  long t_ = 0;
};

}  // namespace annodet::nn
