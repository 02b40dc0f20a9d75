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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annodet/core/keyvalue.hpp"
#include "annodet/dataset/dataset.hpp"
#include "annodet/detector/detector.hpp"
#include "annodet/embedding/embedding.hpp"
#include "annodet/evaluation/evaluation.hpp"

namespace annodet::harness {

namespace fs = std::filesystem;

/// Environment variable that overrides the configured output directory.
inline constexpr const char* kOutputRootEnv = "ANNODET_OUTPUT_ROOT";

enum class EmbeddingVariant { kNone, kDtl, kMatl };

EmbeddingVariant parse_variant(const std::string& s);
std::string to_string(EmbeddingVariant v);

struct ExperimentConfig {
  std::string manifest;  // empty selects the synthetic generator
  dataset::GeneratorConfig synth;
  std::uint64_t synth_seed = 7;

  int patch_side = 48;
  int tile_stride = 16;
  int window = 48;
  int stride = 8;
  int latent_dim = 64;
  int encoder_input = 32;

  EmbeddingVariant variant = EmbeddingVariant::kMatl;
  fusion::FusionConfig fusion;  // enabled iff variant != none

  int embed_epochs = 50;
  int embed_max_patches = 1000;
  double embed_lr = 1e-3;
  int detect_epochs = 20;
  double detect_lr = 1e-3;

  int repeats = 3;
  std::uint64_t seed = 0;
  dataset::SplitSpec split;

  double score_threshold = 0.5;
  evaluation::WindowSpec roc;
  int plot_scenes = 4;

  std::string output_dir = "annodet_out";  // not part of the hash

  /// Unknown keys and inconsistent settings raise kInvalidConfig.
  static ExperimentConfig from_keyvalue(const KeyValueConfig& kv);
  /// Every hashed key with its effective value.
  KeyValueConfig to_keyvalue() const;
  std::string canonical_text() const;
  std::string hash() const;
  std::string variant_label() const;
  void validate() const;
};

/// Applies an optional config file, then the environment output root, then
/// `key=value` overrides (which win).
ExperimentConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides);

std::uint64_t repeat_seed(const ExperimentConfig& cfg, int repeat);

// ---------------------------------------------------------------------------
// Split-tagged data access.

struct AccessEntry {
  std::string stage;
  std::string split;
  std::size_t count = 0;
};

class AccessLog {
 public:
  void record(const std::string& stage, const std::string& split, std::size_t count) {
    entries_.push_back({stage, split, count});
  }
  const std::vector<AccessEntry>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::vector<AccessEntry> entries_;
};

/// Scenes of one split; every read is logged with the requesting stage.
class SplitHandle {
 public:
  SplitHandle(std::string tag, std::vector<dataset::Scene> scenes, AccessLog* log)
      : tag_(std::move(tag)), scenes_(std::move(scenes)), log_(log) {}

  const std::string& tag() const { return tag_; }
  std::size_t size() const { return scenes_.size(); }
  const std::vector<dataset::Scene>& read(const std::string& stage) const {
    if (log_) log_->record(stage, tag_, scenes_.size());
    return scenes_;
  }

 private:
  std::string tag_;
  std::vector<dataset::Scene> scenes_;
  AccessLog* log_;
};

struct SplitData {
  SplitHandle train;
  SplitHandle val;
  SplitHandle test;
};

std::vector<dataset::Scene> load_dataset(const ExperimentConfig& cfg);
dataset::SplitIndices split_indices(const std::vector<dataset::Scene>& scenes, const ExperimentConfig& cfg, int repeat);
SplitData make_splits(const std::vector<dataset::Scene>& scenes, const dataset::SplitIndices& idx, AccessLog* log);

// ---------------------------------------------------------------------------
// Stage building blocks shared by `run` and the single-stage commands.

std::vector<dataset::Patch> make_patches(const std::vector<dataset::Scene>& scenes, const ExperimentConfig& cfg);
void save_patches(const fs::path& path, const std::vector<dataset::Patch>& patches);
std::vector<dataset::Patch> load_patches(const fs::path& path);

embedding::EncoderConfig encoder_config(const ExperimentConfig& cfg, int repeat);
embedding::EmbeddingTrainConfig embedding_config(const ExperimentConfig& cfg, int repeat);
detector::DetectorConfig detector_config(const ExperimentConfig& cfg, int repeat);
std::optional<detector::FusionSetup> fusion_setup(const ExperimentConfig& cfg, const embedding::PatchEncoder* encoder);

detector::GridLookup extract_grids(const std::vector<dataset::Scene>& scenes, const embedding::PatchEncoder& encoder,
                                   const ExperimentConfig& cfg, const fs::path& cache_dir);

std::vector<evaluation::SceneDetections> run_inference(const detector::Detector& det,
                                                       const std::vector<dataset::Scene>& scenes,
                                                       const detector::GridLookup* grids);

// ---------------------------------------------------------------------------
// Orchestration.

/// Stage failure; the run directory keeps everything written before it.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const std::string& what)
      : Error(Errc::kStageFailure, "stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunRecord {
  std::string config_hash;
  std::string variant;
  int repeat = 0;
  std::uint64_t split_seed = 0;
  std::map<std::string, std::string> artifacts;  // name -> path relative to the repeat directory
  evaluation::MetricsReport metrics;
  std::map<std::string, double> timings;  // seconds per stage
  std::string status = "ok";
  std::string failed_stage;
  fs::path dir;  // not serialized

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  fs::path artifact(const std::string& name) const;
};

struct MetricAggregate {
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1); 0 for a single value
  std::vector<double> values;
};

/// map50, precision, recall, f1 and auc aggregated across reports.
std::map<std::string, MetricAggregate> aggregate(const std::vector<evaluation::MetricsReport>& reports);

fs::path run_root(const ExperimentConfig& cfg);

/// Runs every repeat under runs/<hash>/<repeat>/. Finished repeats (DONE marker)
/// are reloaded instead of recomputed. Writes summary.json and metrics.csv.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg,
                                      const std::function<void(const std::string&)>& progress = {});

RunRecord run_repeat(const ExperimentConfig& cfg, const std::vector<dataset::Scene>& scenes, int repeat,
                     const std::function<void(const std::string&)>& progress = {});

/// Finished records below a run root (runs/<hash>).
std::vector<RunRecord> load_records(const fs::path& root);

// ---------------------------------------------------------------------------
// Plots.

struct PlotReport {
  std::vector<fs::path> files;
  std::vector<std::string> notices;
};

/// PCA scatter (SVG), PC1 heatmap overlays (PNG), ROC curves with AUC legend
/// (SVG) and detection overlays at the score threshold (PNG).
PlotReport emit_plots(const std::vector<RunRecord>& records, const fs::path& out_dir,
                      const std::map<std::string, const dataset::Scene*>& scenes, double score_threshold = 0.5);

/// Legend text for one ROC curve.
std::string roc_legend(const std::string& name, double auc);

// ---------------------------------------------------------------------------
// Comparison table.

struct VariantResults {
  std::string name;
  std::vector<evaluation::MetricsReport> repeats;
};

struct TableCell {
  double mean = 0.0;
  double std = 0.0;
  bool best = false;
};

struct ComparisonTable {
  std::vector<std::string> columns{"map50", "precision", "recall", "f1"};
  std::vector<std::string> rows;
  std::vector<int> repeats;
  std::vector<std::vector<TableCell>> cells;  // [row][column]

  std::string to_markdown() const;
  nlohmann::json to_json() const;
};

/// Refuses unequal repeat counts (kIncomparable). The best mean per column is
/// flagged, every tied variant included; a single variant gets no flags.
ComparisonTable compare_variants(const std::vector<VariantResults>& variants);

}  // namespace annodet::harness
