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

#include <chrono>
#include <fstream>
#include <sstream>

#include "annodet/core/container.hpp"
#include "annodet/core/error.hpp"
#include "annodet/core/hash.hpp"
#include "annodet/core/stats.hpp"
#include "annodet/harness/harness.hpp"

namespace annodet::harness {
namespace {

using Clock = std::chrono::steady_clock;

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Runs `fn` as a named stage: timing is recorded and any failure becomes a
// StageFailure naming the stage.
template <typename Fn>
auto stage(const std::string& name, RunRecord& rec, const std::function<void(const std::string&)>& progress, Fn&& fn) {
  if (progress) progress("repeat " + std::to_string(rec.repeat) + ": " + name);
  const auto t0 = Clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      rec.timings[name] = std::chrono::duration<double>(Clock::now() - t0).count();
    } else {
      auto out = fn();
      rec.timings[name] = std::chrono::duration<double>(Clock::now() - t0).count();
      return out;
    }
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.failed_stage = name;
    throw StageFailure(name, e.what());
  }
}

void write_record(const RunRecord& rec) { write_file_atomic(rec.dir / "record.json", dump(rec.to_json())); }

}  // namespace

std::string AccessLog::to_text() const {
  std::string out;
  for (const auto& e : entries_) out += e.stage + "\t" + e.split + "\t" + std::to_string(e.count) + "\n";
  return out;
}

std::vector<dataset::Scene> load_dataset(const ExperimentConfig& cfg) {
  if (!cfg.manifest.empty()) return dataset::load_manifest(cfg.manifest);
  return dataset::generate_synthetic_scenes(cfg.synth, cfg.synth_seed);
}

dataset::SplitIndices split_indices(const std::vector<dataset::Scene>& scenes, const ExperimentConfig& cfg,
                                    int repeat) {
  std::vector<int> keys;
  for (const auto& s : scenes) keys.push_back(dataset::scene_class_key(s));
  dataset::SplitSpec spec = cfg.split;
  spec.seed = repeat_seed(cfg, repeat);
  return dataset::stratified_split(keys, spec);
}

SplitData make_splits(const std::vector<dataset::Scene>& scenes, const dataset::SplitIndices& idx, AccessLog* log) {
  auto pick = [&](const std::vector<std::size_t>& ids) {
    std::vector<dataset::Scene> out;
    for (std::size_t i : ids) out.push_back(scenes.at(i));
    return out;
  };
  return {SplitHandle("train", pick(idx.train), log), SplitHandle("val", pick(idx.val), log),
          SplitHandle("test", pick(idx.test), log)};
}

std::vector<dataset::Patch> make_patches(const std::vector<dataset::Scene>& scenes, const ExperimentConfig& cfg) {
  dataset::TileOptions opt;
  opt.patch_side = cfg.patch_side;
  opt.tile_stride = cfg.tile_stride;
  std::vector<dataset::Patch> out;
  for (const auto& s : scenes) {
    auto ps = dataset::tile_scene(s, opt);
    out.insert(out.end(), std::make_move_iterator(ps.begin()), std::make_move_iterator(ps.end()));
  }
  return out;
}

void save_patches(const fs::path& path, const std::vector<dataset::Patch>& patches) {
  Container c;
  c.meta["kind"] = "patches";
  nlohmann::json items = nlohmann::json::array();
  const int S = patches.empty() ? 0 : patches.front().side;
  Tensor<float> pixels({static_cast<int>(patches.size()), 3, S, S});
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    require(p.side == S, Errc::kShape, "patches must share one side length");
    std::copy(p.pixels.values().begin(), p.pixels.values().end(), pixels.data() + i * 3 * S * S);
    const auto& a = p.annotation;
    items.push_back({{"class_index", a.class_index},
                     {"area_norm", a.area_norm},
                     {"squareness", a.squareness},
                     {"is_background", a.is_background},
                     {"scene_id", p.source_scene_id},
                     {"origin", {p.origin_x, p.origin_y}},
                     {"object_box", {p.object_box.x_min, p.object_box.y_min, p.object_box.x_max, p.object_box.y_max}},
                     {"object_label", p.object_label}});
  }
  c.meta["side"] = S;
  c.meta["patches"] = items;
  c.tensors.push_back({"pixels", std::move(pixels)});
  write_container(path, c);
}

std::vector<dataset::Patch> load_patches(const fs::path& path) {
  const Container c = read_container(path);
  require(c.meta.value("kind", "") == "patches", Errc::kParse, path.string() + " is not a patch file");
  const int S = c.meta.at("side").get<int>();
  const auto& pixels = c.tensor("pixels");
  std::vector<dataset::Patch> out;
  const auto& items = c.meta.at("patches");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& m = items[i];
    dataset::Patch p;
    p.side = S;
    p.pixels = Tensor<float>({3, S, S});
    std::copy(pixels.data() + i * 3 * S * S, pixels.data() + (i + 1) * 3 * S * S, p.pixels.data());
    p.annotation = {m.at("class_index").get<int>(), m.at("area_norm").get<double>(), m.at("squareness").get<double>(),
                    m.at("is_background").get<bool>()};
    p.source_scene_id = m.at("scene_id").get<std::string>();
    p.origin_x = m.at("origin")[0].get<int>();
    p.origin_y = m.at("origin")[1].get<int>();
    const auto& b = m.at("object_box");
    p.object_box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    p.object_label = m.at("object_label").get<int>();
    out.push_back(std::move(p));
  }
  return out;
}

embedding::EncoderConfig encoder_config(const ExperimentConfig& cfg, int repeat) {
  embedding::EncoderConfig e;
  e.latent_dim = cfg.latent_dim;
  e.input_size = cfg.encoder_input;
  e.seed = repeat_seed(cfg, repeat) ^ 0x11;
  return e;
}

embedding::EmbeddingTrainConfig embedding_config(const ExperimentConfig& cfg, int repeat) {
  embedding::EmbeddingTrainConfig t;
  if (cfg.variant == EmbeddingVariant::kDtl) {
    t.loss = embedding::LossKind::kDtl;
    t.weights = {1.0, 0.0, 0.0};
  }
  t.epochs = cfg.embed_epochs;
  t.lr = cfg.embed_lr;
  t.max_patches = cfg.embed_max_patches;
  t.seed = repeat_seed(cfg, repeat) ^ 0x22;
  return t;
}

detector::DetectorConfig detector_config(const ExperimentConfig& cfg, int repeat) {
  detector::DetectorConfig d;
  d.num_classes = cfg.synth.n_classes;
  d.epochs = cfg.detect_epochs;
  d.lr = cfg.detect_lr;
  d.seed = repeat_seed(cfg, repeat) ^ 0x33;
  return d;
}

std::optional<detector::FusionSetup> fusion_setup(const ExperimentConfig& cfg, const embedding::PatchEncoder* encoder) {
  if (!cfg.fusion.enabled) return std::nullopt;
  require(encoder != nullptr, Errc::kConfiguration, "fusion needs a trained encoder");
  return detector::FusionSetup{cfg.fusion, encoder->latent_dim(), encoder->checksum()};
}

detector::GridLookup extract_grids(const std::vector<dataset::Scene>& scenes, const embedding::PatchEncoder& encoder,
                                   const ExperimentConfig& cfg, const fs::path& cache_dir) {
  latentgrid::GridCache cache(cache_dir);
  detector::GridLookup out;
  for (const auto& s : scenes) out.emplace(s.id, cache.get_or_extract(s, encoder, cfg.window, cfg.stride));
  return out;
}

std::vector<evaluation::SceneDetections> run_inference(const detector::Detector& det,
                                                       const std::vector<dataset::Scene>& scenes,
                                                       const detector::GridLookup* grids) {
  std::vector<evaluation::SceneDetections> out;
  for (const auto& s : scenes)
    out.push_back({&s, det.infer(s, detector::grid_for(det, s, grids), det.config().score_threshold,
                                 det.config().nms_iou)});
  return out;
}

nlohmann::json RunRecord::to_json() const {
  return {{"config_hash", config_hash}, {"variant", variant},   {"repeat", repeat},
          {"split_seed", split_seed},   {"artifacts", artifacts}, {"metrics", metrics.to_json()},
          {"timings", timings},         {"status", status},     {"failed_stage", failed_stage}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.repeat = j.at("repeat").get<int>();
  r.split_seed = j.at("split_seed").get<std::uint64_t>();
  r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  r.metrics = evaluation::MetricsReport::from_json(j.at("metrics"));
  r.timings = j.value("timings", std::map<std::string, double>{});
  r.status = j.value("status", "ok");
  r.failed_stage = j.value("failed_stage", "");
  return r;
}

fs::path RunRecord::artifact(const std::string& name) const {
  auto it = artifacts.find(name);
  return it == artifacts.end() ? fs::path() : dir / it->second;
}

std::map<std::string, MetricAggregate> aggregate(const std::vector<evaluation::MetricsReport>& reports) {
  std::map<std::string, MetricAggregate> out;
  for (const auto& r : reports) {
    out["map50"].values.push_back(r.map50);
    out["precision"].values.push_back(r.precision);
    out["recall"].values.push_back(r.recall);
    out["f1"].values.push_back(r.f1);
    out["auc"].values.push_back(r.auc);
  }
  for (auto& [_, a] : out) {
    a.mean = mean(a.values);
    a.std = a.values.size() > 1 ? sample_std(a.values) : 0.0;
  }
  return out;
}

fs::path run_root(const ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "runs" / cfg.hash(); }

RunRecord run_repeat(const ExperimentConfig& cfg, const std::vector<dataset::Scene>& scenes, int repeat,
                     const std::function<void(const std::string&)>& progress) {
  RunRecord rec;
  rec.config_hash = cfg.hash();
  rec.variant = cfg.variant_label();
  rec.repeat = repeat;
  rec.split_seed = repeat_seed(cfg, repeat);
  rec.dir = run_root(cfg) / std::to_string(repeat);
  if (fs::exists(rec.dir / "DONE")) {
    RunRecord done = RunRecord::from_json(nlohmann::json::parse(read_file(rec.dir / "record.json")));
    done.dir = rec.dir;
    return done;
  }
  fs::create_directories(rec.dir);
  AccessLog log;
  auto finish_log = [&] { write_file_atomic(rec.dir / "access_log.tsv", log.to_text()); };

  try {
    const SplitData splits =
        stage("split", rec, progress, [&] { return make_splits(scenes, split_indices(scenes, cfg, repeat), &log); });
    {
      nlohmann::json sizes;
      for (const auto* h : {&splits.train, &splits.val, &splits.test}) sizes[h->tag()] = h->size();
      write_file_atomic(rec.dir / "split.json", dump({{"seed", rec.split_seed}, {"sizes", sizes}}));
      rec.artifacts["split"] = "split.json";
    }

    std::optional<embedding::ConvEncoder> encoder;
    detector::GridLookup grids;
    if (cfg.variant != EmbeddingVariant::kNone) {
      const auto patches = stage("patches", rec, progress, [&] {
        std::vector<dataset::Scene> pool = splits.train.read("patches");
        const auto& val = splits.val.read("patches");
        pool.insert(pool.end(), val.begin(), val.end());
        return make_patches(pool, cfg);
      });
      stage("embed", rec, progress, [&] {
        auto res = embedding::train_embedding(patches, encoder_config(cfg, repeat), embedding_config(cfg, repeat));
        res.encoder.freeze();
        res.encoder.save(rec.dir / "encoder.ckpt");
        embedding::write_training_log(rec.dir / "embed_log.csv", res.log);
        encoder = std::move(res.encoder);
      });
      rec.artifacts["encoder"] = "encoder.ckpt";
      rec.artifacts["embed_log"] = "embed_log.csv";
      stage("grids", rec, progress, [&] {
        for (const auto* h : {&splits.train, &splits.val}) {
          auto g = extract_grids(h->read("grids"), *encoder, cfg, rec.dir / "grids");
          grids.merge(g);
        }
      });
      rec.artifacts["grids"] = "grids";
    }

    const auto det = stage("detect", rec, progress, [&] {
      auto res = detector::train_detector(splits.train.read("detect"), detector_config(cfg, repeat),
                                          fusion_setup(cfg, encoder ? &*encoder : nullptr), &grids);
      res.detector.save(rec.dir / "detector.ckpt");
      std::string csv = "epoch,loss,rpn_objectness,rpn_box,classification,box_regression\n";
      for (const auto& e : res.log) {
        std::ostringstream os;
        os.precision(17);
        os << e.epoch << ',' << e.loss << ',' << e.rpn_objectness << ',' << e.rpn_box << ',' << e.classification << ','
           << e.box_regression << '\n';
        csv += os.str();
      }
      write_file_atomic(rec.dir / "detect_log.csv", csv);
      return std::move(res.detector);
    });
    rec.artifacts["detector"] = "detector.ckpt";
    rec.artifacts["detect_log"] = "detect_log.csv";

    stage("evaluate", rec, progress, [&] {
      const auto& test = splits.test.read("evaluate");
      if (encoder) {
        auto g = extract_grids(test, *encoder, cfg, rec.dir / "grids");
        grids.merge(g);
      }
      const auto results = run_inference(det, test, encoder ? &grids : nullptr);
      evaluation::EvaluationOptions opts;
      opts.num_classes = cfg.synth.n_classes;
      opts.score_threshold = cfg.score_threshold;
      opts.roc = cfg.roc;
      rec.metrics = evaluation::evaluate(results, opts);
      rec.metrics.seed = rec.split_seed;
      rec.metrics.split_id = "repeat-" + std::to_string(repeat) + "-" + hex64(rec.split_seed);

      nlohmann::json dets = nlohmann::json::array();
      std::string roc = "score,label,scene_id\n";
      for (const auto& r : results) {
        for (auto& d : detector::detections_to_json(r.scene->id, r.detections)) dets.push_back(d);
        for (const auto& [score, label] : evaluation::window_examples(*r.scene, r.detections, cfg.roc)) {
          std::ostringstream os;
          os.precision(17);
          os << score << ',' << (label ? 1 : 0) << ',' << r.scene->id << '\n';
          roc += os.str();
        }
      }
      write_file_atomic(rec.dir / "detections.json", dump(dets));
      write_file_atomic(rec.dir / "roc_examples.csv", roc);
      rec.artifacts["detections"] = "detections.json";
      rec.artifacts["roc_examples"] = "roc_examples.csv";

      std::vector<std::string> plot_ids;
      for (std::size_t i = 0; i < test.size() && static_cast<int>(i) < cfg.plot_scenes; ++i) plot_ids.push_back(test[i].id);
      write_file_atomic(rec.dir / "plot_scenes.json", dump(plot_ids));
      rec.artifacts["plot_scenes"] = "plot_scenes.json";

      if (encoder) {
        // held-out embeddings for the PCA scatter, one row per test patch
        const auto patches = make_patches(test, cfg);
        std::vector<dataset::AnnotationVector> anns;
        for (const auto& p : patches) anns.push_back(p.annotation);
        const auto pick = embedding::balanced_subsample(anns, 600, rec.split_seed);
        std::vector<Tensor<float>> px;
        std::vector<int> labels;
        for (std::size_t i : pick) {
          px.push_back(patches[i].pixels);
          labels.push_back(patches[i].annotation.class_index);
        }
        Container c;
        c.meta["kind"] = "embeddings";
        c.meta["labels"] = labels;
        c.tensors.push_back({"embeddings", encoder->encode_batch(px)});
        write_container(rec.dir / "embeddings.ckpt", c);
        rec.artifacts["embeddings"] = "embeddings.ckpt";

        std::vector<std::string> grid_files;
        latentgrid::GridCache cache(rec.dir / "grids");
        for (const auto& id : plot_ids)
          grid_files.push_back(fs::relative(cache.path_for(id, encoder->checksum(), cfg.window, cfg.stride), rec.dir)
                                   .generic_string());
        write_file_atomic(rec.dir / "plot_grids.json", dump(grid_files));
        rec.artifacts["plot_grids"] = "plot_grids.json";
      }
      write_file_atomic(rec.dir / "metrics.json", dump(rec.metrics.to_json()));
      rec.artifacts["metrics"] = "metrics.json";
    });
  } catch (const StageFailure&) {
    finish_log();
    write_record(rec);
    write_file_atomic(rec.dir / "FAILED", rec.failed_stage + "\n");
    throw;
  }
  finish_log();
  rec.artifacts["access_log"] = "access_log.tsv";
  write_record(rec);
  write_file_atomic(rec.dir / "DONE", rec.config_hash + "\n");
  return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg,
                                      const std::function<void(const std::string&)>& progress) {
  cfg.validate();
  const fs::path root = run_root(cfg);
  fs::create_directories(root);
  const std::string text = cfg.canonical_text();
  if (fs::exists(root / "config.txt"))
    require(read_file(root / "config.txt") == text, Errc::kDatasetConsistency,
            "stored config under " + root.string() + " differs from the requested config");
  else
    write_file_atomic(root / "config.txt", text);

  std::vector<dataset::Scene> scenes;
  try {
    scenes = load_dataset(cfg);
    require(!scenes.empty(), Errc::kEmptyDataset, "dataset has no scenes");
  } catch (const Error& e) {
    throw StageFailure("dataset", e.what());
  }

  std::vector<RunRecord> records;
  for (int r = 0; r < cfg.repeats; ++r) records.push_back(run_repeat(cfg, scenes, r, progress));

  std::vector<evaluation::MetricsReport> reports;
  for (const auto& r : records) reports.push_back(r.metrics);
  nlohmann::json summary = {{"config_hash", cfg.hash()}, {"variant", cfg.variant_label()}, {"repeats", cfg.repeats}};
  for (const auto& [name, a] : aggregate(reports))
    summary["metrics"][name] = {{"mean", a.mean}, {"std", a.std}, {"values", a.values}};
  write_file_atomic(root / "summary.json", dump(summary));

  std::string csv = "config_hash,variant,repeat,split,map50,precision,recall,f1,auc\n";
  for (const auto& r : records) {
    std::ostringstream os;
    os.precision(17);
    os << r.config_hash << ',' << r.variant << ',' << r.repeat << ',' << r.metrics.split_id << ',' << r.metrics.map50
       << ',' << r.metrics.precision << ',' << r.metrics.recall << ',' << r.metrics.f1 << ',' << r.metrics.auc << '\n';
    csv += os.str();
  }
  write_file_atomic(root / "metrics.csv", csv);
  return records;
}

std::vector<RunRecord> load_records(const fs::path& root) {
  std::vector<RunRecord> out;
  if (!fs::is_directory(root)) return out;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "DONE")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoi(a.filename().string()) < std::stoi(b.filename().string());
  });
  for (const auto& d : dirs) {
    RunRecord r = RunRecord::from_json(nlohmann::json::parse(read_file(d / "record.json")));
    r.dir = d;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace annodet::harness
