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

// Command-line driver for the annodet pipeline.
//
// Exit status: 0 on success, 1 for configuration errors, 2 when a stage fails.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "annodet/core/container.hpp"
#include "annodet/core/error.hpp"
#include "annodet/harness/harness.hpp"

namespace {

using namespace annodet;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kStageError = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  int repeat = 0;
};

class ConfigFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

harness::ExperimentConfig resolve(const Common& c) {
  try {
    std::vector<std::string> overrides = c.sets;
    if (!c.output.empty()) overrides.push_back("output_dir=" + c.output);
    auto cfg = harness::resolve_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config), overrides);
    if (c.repeat < 0 || c.repeat >= cfg.repeats)
      throw ConfigFailure("--repeat " + std::to_string(c.repeat) + " is outside [0, " + std::to_string(cfg.repeats) + ")");
    return cfg;
  } catch (const ConfigFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigFailure(e.what());
  }
}

fs::path stage_dir(const harness::ExperimentConfig& cfg, int repeat) {
  return fs::path(cfg.output_dir) / "stages" / cfg.hash() / std::to_string(repeat);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "keyed text config file");
  app->add_option("-s,--set", c.sets, "override a config key (key=value), repeatable");
  app->add_option("-o,--output", c.output, std::string("output root (overrides ") + harness::kOutputRootEnv + ")");
}

void add_repeat(CLI::App* app, Common& c) {
  app->add_option("-r,--repeat", c.repeat, "repeat index selecting the split")->default_val(0);
}

struct SplitScenes {
  std::vector<dataset::Scene> all;
  harness::SplitData splits;
};

SplitScenes load_splits(const harness::ExperimentConfig& cfg, int repeat) {
  auto scenes = harness::load_dataset(cfg);
  auto idx = harness::split_indices(scenes, cfg, repeat);
  auto splits = harness::make_splits(scenes, idx, nullptr);
  return {std::move(scenes), std::move(splits)};
}

std::optional<embedding::ConvEncoder> load_encoder(const std::string& path) {
  if (path.empty()) return std::nullopt;
  auto enc = embedding::ConvEncoder::load(path);
  enc.freeze();
  return enc;
}

detector::GridLookup load_grids(const std::vector<dataset::Scene>& scenes, const embedding::PatchEncoder& enc,
                                const harness::ExperimentConfig& cfg, const fs::path& dir) {
  latentgrid::GridCache cache(dir);
  detector::GridLookup out;
  for (const auto& s : scenes) {
    auto g = cache.lookup(s.id, enc.checksum(), cfg.window, cfg.stride);
    require(g.has_value(), Errc::kDatasetConsistency, "no grid for scene '" + s.id + "' in " + dir.string());
    out.emplace(s.id, std::move(*g));
  }
  return out;
}

void print_progress(const std::string& msg) { std::cerr << "[annodet] " << msg << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annodet: annotation-guided feature augmentation for two-stage detection"};
  app.require_subcommand(1);

  Common c;
  std::string out, manifest_out, patches_path, encoder_path, grids_dir, detector_path, run_dir, json_out;
  std::string which_splits = "all";
  std::vector<std::string> compare_dirs;
  bool no_plots = false;

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset and write a manifest");
  add_common(synth, c);
  synth->add_option("--out", manifest_out, "manifest path (default <output>/data/manifest.json)");

  auto* patches = app.add_subcommand("patches", "tile train+val scenes into annotated patches");
  add_common(patches, c);
  add_repeat(patches, c);
  patches->add_option("--out", out, "patch file");

  auto* train_embed = app.add_subcommand("train-embed", "train the patch encoder");
  add_common(train_embed, c);
  add_repeat(train_embed, c);
  train_embed->add_option("--patches", patches_path, "patch file from `patches`");
  train_embed->add_option("--out", out, "encoder checkpoint");

  auto* grids = app.add_subcommand("grids", "extract latent grids with a frozen encoder");
  add_common(grids, c);
  add_repeat(grids, c);
  grids->add_option("--encoder", encoder_path, "encoder checkpoint")->required();
  grids->add_option("--out", grids_dir, "grid cache directory");
  grids->add_option("--splits", which_splits, "all, or a comma list of train,val,test");

  auto* train_detect = app.add_subcommand("train-detect", "train the detector on the training split");
  add_common(train_detect, c);
  add_repeat(train_detect, c);
  train_detect->add_option("--encoder", encoder_path, "encoder checkpoint (fused variants)");
  train_detect->add_option("--grids", grids_dir, "grid cache directory (fused variants)");
  train_detect->add_option("--out", out, "detector checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a detector on the test split");
  add_common(eval, c);
  add_repeat(eval, c);
  eval->add_option("--detector", detector_path, "detector checkpoint")->required();
  eval->add_option("--encoder", encoder_path, "encoder checkpoint (fused detectors)");
  eval->add_option("--grids", grids_dir, "grid cache directory (fused detectors)");
  eval->add_option("--out", out, "metrics JSON");

  auto* plots = app.add_subcommand("plots", "render plots for a finished run");
  add_common(plots, c);
  plots->add_option("--run", run_dir, "run directory (runs/<hash>); default from the config");
  plots->add_option("--out", out, "plot directory (default <run>/plots)");

  auto* run = app.add_subcommand("run", "full pipeline over all repeats");
  add_common(run, c);
  run->add_flag("--no-plots", no_plots, "skip plot rendering");

  auto* compare = app.add_subcommand("compare", "compare finished runs (one directory per variant)");
  compare->add_option("runs", compare_dirs, "run directories (runs/<hash>)")->required();
  compare->add_option("--json", json_out, "also write the table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*compare) {
      std::vector<harness::VariantResults> variants;
      for (const auto& d : compare_dirs) {
        const auto recs = harness::load_records(d);
        if (recs.empty()) {
          std::cerr << "error: no finished repeats under " << d << "\n";
          return kConfigError;
        }
        harness::VariantResults v{recs.front().variant, {}};
        for (const auto& r : recs) v.repeats.push_back(r.metrics);
        variants.push_back(std::move(v));
      }
      const auto table = harness::compare_variants(variants);
      std::cout << table.to_markdown();
      if (!json_out.empty()) write_file_atomic(json_out, table.to_json().dump(2) + "\n");
      return kOk;
    }

    const auto cfg = resolve(c);
    const fs::path sdir = stage_dir(cfg, c.repeat);

    if (*synth) {
      const fs::path path = manifest_out.empty() ? fs::path(cfg.output_dir) / "data" / "manifest.json" : fs::path(manifest_out);
      const auto scenes = dataset::generate_synthetic_scenes(cfg.synth, cfg.synth_seed);
      dataset::save_manifest(scenes, path);
      std::cout << path.string() << "\n";
    } else if (*patches) {
      auto data = load_splits(cfg, c.repeat);
      std::vector<dataset::Scene> pool = data.splits.train.read("patches");
      const auto& val = data.splits.val.read("patches");
      pool.insert(pool.end(), val.begin(), val.end());
      const auto ps = harness::make_patches(pool, cfg);
      const fs::path path = out.empty() ? sdir / "patches.bin" : fs::path(out);
      harness::save_patches(path, ps);
      std::cout << path.string() << " (" << ps.size() << " patches)\n";
    } else if (*train_embed) {
      const fs::path src = patches_path.empty() ? sdir / "patches.bin" : fs::path(patches_path);
      const auto ps = harness::load_patches(src);
      require(cfg.variant != harness::EmbeddingVariant::kNone, Errc::kInvalidConfig,
              "embed.variant = none has no encoder to train");
      auto res = embedding::train_embedding(ps, harness::encoder_config(cfg, c.repeat),
                                            harness::embedding_config(cfg, c.repeat));
      res.encoder.freeze();
      const fs::path path = out.empty() ? sdir / "encoder.ckpt" : fs::path(out);
      res.encoder.save(path);
      embedding::write_training_log(fs::path(path).replace_extension(".csv"), res.log);
      std::cout << path.string() << "\n";
    } else if (*grids) {
      const auto enc = load_encoder(encoder_path);
      auto data = load_splits(cfg, c.repeat);
      std::vector<dataset::Scene> scenes;
      if (which_splits == "all") {
        scenes = data.all;
      } else {
        for (const auto& tag : KeyValueConfig::parse("s=" + which_splits).get_list("s", {})) {
          const harness::SplitHandle* h = tag == "train" ? &data.splits.train
                                          : tag == "val" ? &data.splits.val
                                          : tag == "test" ? &data.splits.test
                                                          : nullptr;
          if (!h) {
            std::cerr << "error: unknown split '" << tag << "'\n";
            return kConfigError;
          }
          const auto& s = h->read("grids");
          scenes.insert(scenes.end(), s.begin(), s.end());
        }
      }
      const fs::path dir = grids_dir.empty() ? sdir / "grids" : fs::path(grids_dir);
      harness::extract_grids(scenes, *enc, cfg, dir);
      std::cout << dir.string() << " (" << scenes.size() << " scenes)\n";
    } else if (*train_detect) {
      auto data = load_splits(cfg, c.repeat);
      const auto& train = data.splits.train.read("detect");
      const auto enc = cfg.fusion.enabled ? load_encoder(encoder_path.empty() ? (sdir / "encoder.ckpt").string() : encoder_path)
                                          : std::nullopt;
      detector::GridLookup lookup;
      if (enc) lookup = load_grids(train, *enc, cfg, grids_dir.empty() ? sdir / "grids" : fs::path(grids_dir));
      auto res = detector::train_detector(train, harness::detector_config(cfg, c.repeat),
                                          harness::fusion_setup(cfg, enc ? &*enc : nullptr), &lookup,
                                          [](const detector::EpochLog& e) {
                                            print_progress("epoch " + std::to_string(e.epoch) +
                                                           " loss " + std::to_string(e.loss));
                                          });
      const fs::path path = out.empty() ? sdir / "detector.ckpt" : fs::path(out);
      res.detector.save(path);
      std::cout << path.string() << "\n";
    } else if (*eval) {
      const auto det = detector::Detector::load(detector_path);
      auto data = load_splits(cfg, c.repeat);
      const auto& test = data.splits.test.read("evaluate");
      const auto enc = det.fused() ? load_encoder(encoder_path.empty() ? (sdir / "encoder.ckpt").string() : encoder_path)
                                   : std::nullopt;
      detector::GridLookup lookup;
      if (enc) lookup = harness::extract_grids(test, *enc, cfg, grids_dir.empty() ? sdir / "grids" : fs::path(grids_dir));
      const auto results = harness::run_inference(det, test, enc ? &lookup : nullptr);
      evaluation::EvaluationOptions opts;
      opts.num_classes = cfg.synth.n_classes;
      opts.score_threshold = cfg.score_threshold;
      opts.roc = cfg.roc;
      auto rep = evaluation::evaluate(results, opts);
      rep.seed = harness::repeat_seed(cfg, c.repeat);
      const std::string text = rep.to_json().dump(2) + "\n";
      if (!out.empty()) write_file_atomic(out, text);
      std::cout << text;
    } else if (*plots) {
      const fs::path root = run_dir.empty() ? harness::run_root(cfg) : fs::path(run_dir);
      const auto recs = harness::load_records(root);
      const auto scenes = harness::load_dataset(cfg);
      std::map<std::string, const dataset::Scene*> by_id;
      for (const auto& s : scenes) by_id[s.id] = &s;
      const auto rep = harness::emit_plots(recs, out.empty() ? root / "plots" : fs::path(out), by_id, cfg.score_threshold);
      for (const auto& n : rep.notices) std::cerr << "notice: " << n << "\n";
      for (const auto& f : rep.files) std::cout << f.string() << "\n";
    } else if (*run) {
      const auto recs = harness::run_experiment(cfg, print_progress);
      const fs::path root = harness::run_root(cfg);
      if (!no_plots) {
        const auto scenes = harness::load_dataset(cfg);
        std::map<std::string, const dataset::Scene*> by_id;
        for (const auto& s : scenes) by_id[s.id] = &s;
        const auto rep = harness::emit_plots(recs, root / "plots", by_id, cfg.score_threshold);
        for (const auto& n : rep.notices) std::cerr << "notice: " << n << "\n";
      }
      std::vector<evaluation::MetricsReport> reports;
      for (const auto& r : recs) reports.push_back(r.metrics);
      std::printf("%s  %s  repeats=%zu\n", root.string().c_str(), cfg.variant_label().c_str(), recs.size());
      for (const auto& [name, a] : harness::aggregate(reports))
        std::printf("  %-9s %.4f ± %.4f\n", name.c_str(), a.mean, a.std);
    }
    return kOk;
  } catch (const ConfigFailure& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    const bool config = e.code() == Errc::kInvalidConfig;
    std::cerr << (config ? "config error: " : "stage failure: ") << e.what() << "\n";
    return config ? kConfigError : kStageError;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kStageError;
  }
}
