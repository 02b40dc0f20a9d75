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

#include <charconv>
#include <cstdlib>
#include <set>

#include "annodet/core/error.hpp"
#include "annodet/core/hash.hpp"
#include "annodet/harness/harness.hpp"

namespace annodet::harness {
namespace {

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> kKeys{
      "dataset.manifest", "synth.image_size", "synth.n_classes", "synth.objects_min", "synth.objects_max",
      "synth.size_min",   "synth.size_max",   "synth.n_scenes",  "synth.seed",        "patch.side",
      "patch.stride",     "grid.window",      "grid.stride",     "embed.variant",     "embed.latent_dim",
      "embed.input_size", "embed.epochs",     "embed.max_patches", "embed.lr",        "fusion.mode",
      "fusion.levels",    "fusion.init_policy",    "fusion.mask_bias", "detect.epochs",    "detect.lr",
      "repeats",          "seed",             "split.train",     "split.val",         "split.test",
      "eval.score_threshold", "eval.roc_window", "eval.roc_stride", "plots.scenes",   "output_dir"};
  return kKeys;
}

}  // namespace

EmbeddingVariant parse_variant(const std::string& s) {
  if (s == "none") return EmbeddingVariant::kNone;
  if (s == "dtl") return EmbeddingVariant::kDtl;
  if (s == "matl") return EmbeddingVariant::kMatl;
  fail(Errc::kInvalidConfig, "unknown embedding variant '" + s + "' (none, dtl, matl)");
}

std::string to_string(EmbeddingVariant v) {
  switch (v) {
    case EmbeddingVariant::kNone: return "none";
    case EmbeddingVariant::kDtl: return "dtl";
    case EmbeddingVariant::kMatl: return "matl";
  }
  return "none";
}

ExperimentConfig ExperimentConfig::from_keyvalue(const KeyValueConfig& kv) {
  for (const auto& [k, _] : kv.values())
    require(known_keys().contains(k), Errc::kInvalidConfig, "unknown config key '" + k + "'");
  ExperimentConfig c;
  c.manifest = kv.get_string("dataset.manifest", c.manifest);
  KeyValueConfig synth;
  for (const auto& [k, v] : kv.values())
    if (k.rfind("synth.", 0) == 0 && k != "synth.seed") synth.set(k.substr(6), v);
  c.synth = dataset::GeneratorConfig::from_keyvalue(synth);
  c.synth_seed = static_cast<std::uint64_t>(kv.get_int("synth.seed", static_cast<long>(c.synth_seed)));
  c.patch_side = static_cast<int>(kv.get_int("patch.side", c.patch_side));
  c.tile_stride = static_cast<int>(kv.get_int("patch.stride", c.tile_stride));
  c.window = static_cast<int>(kv.get_int("grid.window", c.window));
  c.stride = static_cast<int>(kv.get_int("grid.stride", c.stride));
  c.variant = parse_variant(kv.get_string("embed.variant", to_string(c.variant)));
  c.latent_dim = static_cast<int>(kv.get_int("embed.latent_dim", c.latent_dim));
  c.encoder_input = static_cast<int>(kv.get_int("embed.input_size", c.encoder_input));
  c.embed_epochs = static_cast<int>(kv.get_int("embed.epochs", c.embed_epochs));
  c.embed_max_patches = static_cast<int>(kv.get_int("embed.max_patches", c.embed_max_patches));
  c.embed_lr = kv.get_double("embed.lr", c.embed_lr);

  const std::string mode = kv.get_string("fusion.mode", c.variant == EmbeddingVariant::kNone ? "off" : "mask");
  c.fusion.enabled = mode != "off";
  if (c.fusion.enabled) c.fusion.mode = fusion::parse_fusion_mode(mode);
  c.fusion.levels = kv.get_list("fusion.levels", c.fusion.levels);
  c.fusion.init = fusion::parse_init_policy(kv.get_string("fusion.init_policy", fusion::to_string(c.fusion.init)));
  c.fusion.mask_bias = kv.get_double("fusion.mask_bias", c.fusion.mask_bias);

  c.detect_epochs = static_cast<int>(kv.get_int("detect.epochs", c.detect_epochs));
  c.detect_lr = kv.get_double("detect.lr", c.detect_lr);
  c.repeats = static_cast<int>(kv.get_int("repeats", c.repeats));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
  c.split.train = kv.get_double("split.train", c.split.train);
  c.split.val = kv.get_double("split.val", c.split.val);
  c.split.test = kv.get_double("split.test", c.split.test);
  c.score_threshold = kv.get_double("eval.score_threshold", c.score_threshold);
  c.roc.window = static_cast<int>(kv.get_int("eval.roc_window", c.roc.window));
  c.roc.stride = static_cast<int>(kv.get_int("eval.roc_stride", c.roc.stride));
  c.plot_scenes = static_cast<int>(kv.get_int("plots.scenes", c.plot_scenes));
  c.output_dir = kv.get_string("output_dir", c.output_dir);
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, Errc::kInvalidConfig, msg); };
  synth.validate();
  check(patch_side >= 4 && tile_stride >= 1, "patch.side must be >= 4 and patch.stride >= 1");
  check(window >= encoder_input, "grid.window (" + std::to_string(window) + ") must be at least embed.input_size (" +
                                     std::to_string(encoder_input) + ")");
  check(stride >= 1, "grid.stride must be >= 1");
  check(latent_dim >= 1 && encoder_input >= 16, "embed.latent_dim must be >= 1 and embed.input_size >= 16");
  check(embed_epochs >= 0 && detect_epochs >= 0, "epochs must be >= 0");
  check(embed_max_patches >= 0, "embed.max_patches must be >= 0");
  check(embed_lr > 0 && detect_lr > 0, "learning rates must be positive");
  check(repeats >= 1, "repeats must be >= 1");
  check(variant != EmbeddingVariant::kNone || !fusion.enabled, "embed.variant = none requires fusion.mode = off");
  check(variant == EmbeddingVariant::kNone || fusion.enabled,
        "embed.variant = " + to_string(variant) + " needs a fusion mode (additive, film, mask)");
  if (fusion.enabled) fusion.validate();
  check(score_threshold >= 0 && score_threshold <= 1, "eval.score_threshold must lie in [0, 1]");
  check(roc.window >= 1 && roc.stride >= 1, "eval.roc_window and eval.roc_stride must be >= 1");
  check(plot_scenes >= 0, "plots.scenes must be >= 0");
  const double sum = split.train + split.val + split.test;
  check(split.train > 0 && split.val > 0 && split.test > 0 && std::abs(sum - 1.0) <= 1e-9,
        "split ratios must be positive and sum to 1");
}

KeyValueConfig ExperimentConfig::to_keyvalue() const {
  KeyValueConfig kv;
  kv.set("dataset.manifest", manifest);
  kv.set("synth.image_size", std::to_string(synth.image_size));
  kv.set("synth.n_classes", std::to_string(synth.n_classes));
  kv.set("synth.objects_min", std::to_string(synth.objects_min));
  kv.set("synth.objects_max", std::to_string(synth.objects_max));
  kv.set("synth.size_min", std::to_string(synth.size_min));
  kv.set("synth.size_max", std::to_string(synth.size_max));
  kv.set("synth.n_scenes", std::to_string(synth.n_scenes));
  kv.set("synth.seed", std::to_string(synth_seed));
  kv.set("patch.side", std::to_string(patch_side));
  kv.set("patch.stride", std::to_string(tile_stride));
  kv.set("grid.window", std::to_string(window));
  kv.set("grid.stride", std::to_string(stride));
  kv.set("embed.variant", to_string(variant));
  kv.set("embed.latent_dim", std::to_string(latent_dim));
  kv.set("embed.input_size", std::to_string(encoder_input));
  kv.set("embed.epochs", std::to_string(embed_epochs));
  kv.set("embed.max_patches", std::to_string(embed_max_patches));
  kv.set("embed.lr", num(embed_lr));
  kv.set("fusion.mode", fusion.enabled ? fusion::to_string(fusion.mode) : "off");
  kv.set("fusion.levels", join(fusion.levels));
  kv.set("fusion.init_policy", fusion::to_string(fusion.init));
  kv.set("fusion.mask_bias", num(fusion.mask_bias));
  kv.set("detect.epochs", std::to_string(detect_epochs));
  kv.set("detect.lr", num(detect_lr));
  kv.set("repeats", std::to_string(repeats));
  kv.set("seed", std::to_string(seed));
  kv.set("split.train", num(split.train));
  kv.set("split.val", num(split.val));
  kv.set("split.test", num(split.test));
  kv.set("eval.score_threshold", num(score_threshold));
  kv.set("eval.roc_window", std::to_string(roc.window));
  kv.set("eval.roc_stride", std::to_string(roc.stride));
  kv.set("plots.scenes", std::to_string(plot_scenes));
  return kv;
}

std::string ExperimentConfig::canonical_text() const { return to_keyvalue().to_text(); }

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical_text())); }

std::string ExperimentConfig::variant_label() const {
  if (variant == EmbeddingVariant::kNone) return "baseline";
  return to_string(variant) + "+" + fusion::to_string(fusion.mode);
}

ExperimentConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (file) kv = KeyValueConfig::load(file->string());
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) kv.set("output_dir", root);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, Errc::kInvalidConfig, "override '" + o + "' is not key=value");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return ExperimentConfig::from_keyvalue(kv);
}

std::uint64_t repeat_seed(const ExperimentConfig& cfg, int repeat) {
  Fnv1a h;
  h.update("repeat:" + std::to_string(cfg.seed) + ":" + std::to_string(repeat));
  return h.digest();
}

}  // namespace annodet::harness
