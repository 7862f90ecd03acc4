/*
 * Copyright 2026 The birdcls Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "birdcls/pipeline.h"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "birdcls/augmentation.h"
#include "birdcls/io.h"
#include "birdcls/random.h"

namespace birdcls {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_relative() ? (base / path).lexically_normal() : path;
}

// "prefix:path" with the path made absolute; other values pass through.
std::string resolve_tagged(const fs::path& base, const std::string& value,
                           std::initializer_list<std::string_view> tags) {
  for (auto tag : tags) {
    const std::string prefix = std::string(tag) + ":";
    if (value.rfind(prefix, 0) == 0) {
      std::string rest = value.substr(prefix.size());
      // model:<weights>[,<config>[,<labels>]]
      std::stringstream ss(rest);
      std::string out;
      for (std::string part; std::getline(ss, part, ',');) {
        if (!out.empty()) out += ",";
        out += part.empty() ? part : resolve(base, part).string();
      }
      return prefix + out;
    }
  }
  return value;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error("override must be key=value, got '" + assignment + "'");
  }
  std::string pointer = "/" + assignment.substr(0, eq);
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  doc[json::json_pointer(pointer)] = value;
}

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error("unknown config key '" + where + key + "'");
    }
  }
}

StageConfig decode_stage(const json& j, StageKind kind, const std::string& where) {
  StageConfig c = default_stage_config(kind);
  if (j.is_null()) return c;
  reject_unknown(j, {"epochs", "learning_rate", "batch_size", "resolution", "beta1", "beta2",
                     "epsilon"},
                 where + ".");
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.input_resolution = j.value("resolution", c.input_resolution);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

json encode_stage(const StageConfig& c) {
  return {{"epochs", c.epochs},     {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size}, {"resolution", c.input_resolution},
          {"beta1", c.beta1},       {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text, const fs::path& base_dir,
                           const std::vector<std::string>& overrides) {
  json doc = json::parse(json_text.begin(), json_text.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error("run config is not a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  reject_unknown(doc,
                 {"seed", "train_manifest", "test_manifest", "work_dir", "detector",
                  "bird_category", "score_threshold", "pad_fraction", "val_fraction", "augment",
                  "augment_crops", "stage1", "stage2", "backbones"},
                 "");
  RunConfig c;
  try {
    c.seed = doc.value("seed", std::uint64_t{0});
    c.train_manifest = resolve(base_dir, doc.value("train_manifest", std::string()));
    c.test_manifest = resolve(base_dir, doc.value("test_manifest", std::string()));
    c.work_dir = resolve(base_dir, doc.value("work_dir", std::string()));
    c.detector = resolve_tagged(base_dir, doc.value("detector", std::string()), {"fixture", "model"});
    c.bird_category = doc.value("bird_category", c.bird_category);
    c.score_threshold = doc.value("score_threshold", c.score_threshold);
    c.pad_fraction = doc.value("pad_fraction", c.pad_fraction);
    c.val_fraction = doc.value("val_fraction", c.val_fraction);
    c.augment = doc.value("augment", c.augment);
    c.augment_crops = doc.value("augment_crops", c.augment_crops);
    c.stage1 = decode_stage(doc.value("stage1", json()), StageKind::kOriginals, "stage1");
    c.stage2 = decode_stage(doc.value("stage2", json()), StageKind::kCrops, "stage2");
    for (const auto& b : doc.value("backbones", json::array())) {
      reject_unknown(b, {"name", "kind", "init", "stage2_init"}, "backbones[].");
      BackboneSpec spec;
      spec.name = b.value("name", std::string());
      spec.kind = parse_backbone_kind(b.value("kind", std::string("reference_cnn")));
      spec.init = resolve_tagged(base_dir, b.value("init", spec.init), {"pretrained", "checkpoint"});
      spec.stage2_init =
          resolve_tagged(base_dir, b.value("stage2_init", spec.stage2_init), {"checkpoint"});
      c.backbones.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw Error("run config not found: " + path.string());
  return parse_run_config(read_file(path), fs::absolute(path).parent_path(), overrides);
}

std::string to_json(const RunConfig& c) {
  json backbones = json::array();
  for (const auto& b : c.backbones) {
    backbones.push_back({{"name", b.name},
                         {"kind", std::string(to_string(b.kind))},
                         {"init", b.init},
                         {"stage2_init", b.stage2_init}});
  }
  json doc = {{"seed", c.seed},
              {"train_manifest", c.train_manifest.string()},
              {"test_manifest", c.test_manifest.string()},
              {"work_dir", c.work_dir.string()},
              {"detector", c.detector},
              {"bird_category", c.bird_category},
              {"score_threshold", c.score_threshold},
              {"pad_fraction", c.pad_fraction},
              {"val_fraction", c.val_fraction},
              {"augment", c.augment},
              {"augment_crops", c.augment_crops},
              {"stage1", encode_stage(c.stage1)},
              {"stage2", encode_stage(c.stage2)},
              {"backbones", backbones}};
  return doc.dump(2) + "\n";
}

namespace {

// Returns the path of a "tag:path" value, or nullopt if the tag differs.
std::optional<fs::path> tagged_path(const std::string& value, std::string_view tag) {
  const std::string prefix = std::string(tag) + ":";
  if (value.rfind(prefix, 0) != 0) return std::nullopt;
  std::string rest = value.substr(prefix.size());
  return fs::path(rest.substr(0, rest.find(',')));
}

}  // namespace

std::vector<ConfigProblem> validate_config(const RunConfig& c) {
  std::vector<ConfigProblem> problems;
  auto need_file = [&](const fs::path& p, const std::string& field) {
    if (p.empty()) {
      problems.push_back({field, "not set"});
    } else if (!fs::exists(p)) {
      problems.push_back({field, "file not found: " + p.string()});
    }
  };
  need_file(c.train_manifest, "train_manifest");
  need_file(c.test_manifest, "test_manifest");
  if (c.work_dir.empty()) problems.push_back({"work_dir", "not set"});
  if (auto p = tagged_path(c.detector, "fixture")) {
    need_file(*p, "detector");
  } else if (auto m = tagged_path(c.detector, "model")) {
    need_file(*m, "detector");
  } else {
    problems.push_back({"detector", "must be fixture:<path> or model:<path>"});
  }
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) {
    problems.push_back({"val_fraction", "must lie in (0, 1)"});
  }
  if (!(c.score_threshold >= 0.0 && c.score_threshold <= 1.0)) {
    problems.push_back({"score_threshold", "must lie in [0, 1]"});
  }
  if (!(c.pad_fraction >= 0.0)) problems.push_back({"pad_fraction", "must be non-negative"});
  if (c.bird_category.empty()) problems.push_back({"bird_category", "not set"});
  for (const auto& msg : check(c.stage1)) problems.push_back({"stage1", msg});
  for (const auto& msg : check(c.stage2)) problems.push_back({"stage2", msg});
  if (c.backbones.empty()) problems.push_back({"backbones", "at least one backbone is required"});
  std::set<std::string> names;
  for (std::size_t i = 0; i < c.backbones.size(); ++i) {
    const auto& b = c.backbones[i];
    const std::string field = "backbones[" + std::to_string(i) + "]";
    if (b.name.empty() || std::any_of(b.name.begin(), b.name.end(),
                                      [](unsigned char ch) { return std::isspace(ch); })) {
      problems.push_back({field + ".name", "must be a non-empty token"});
    } else if (!names.insert(b.name).second) {
      problems.push_back({field + ".name", "duplicate backbone name '" + b.name + "'"});
    }
    if (b.init == "fresh") {
      if (b.kind != BackboneKind::kReferenceCnn) {
        problems.push_back({field + ".init", std::string(to_string(b.kind)) +
                                                 " needs pretrained:<model file>"});
      }
    } else if (auto p = tagged_path(b.init, "pretrained")) {
      need_file(*p, field + ".init");
    } else if (auto p = tagged_path(b.init, "checkpoint")) {
      need_file(*p, field + ".init");
    } else {
      problems.push_back({field + ".init", "must be fresh, pretrained:<path> or checkpoint:<path>"});
    }
    if (b.stage2_init != "previous_stage") {
      if (auto p = tagged_path(b.stage2_init, "checkpoint")) {
        need_file(*p, field + ".stage2_init");
      } else {
        problems.push_back({field + ".stage2_init", "must be previous_stage or checkpoint:<path>"});
      }
    }
  }
  return problems;
}

std::vector<DetectionResult> detect_manifest(const Manifest& manifest, DetectorBackend& backend,
                                             double score_threshold,
                                             std::string_view bird_category) {
  std::vector<DetectionResult> out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records()) {
    Image image;
    try {
      image = load_image(r.path);
    } catch (const Error& e) {
      throw Error("cannot load image '" + r.id + "': " + e.what());
    }
    out.push_back(detect_birds(image, r.id, backend, score_threshold, bird_category));
  }
  return out;
}

Manifest make_crops(const Manifest& manifest,
                    const std::map<std::string, DetectionResult>& detections, double pad_fraction,
                    const fs::path& out_dir) {
  std::vector<ImageRecord> out;
  for (const auto& r : manifest.records()) {
    const auto it = detections.find(r.id);
    if (it == detections.end() || it->second.boxes.empty()) continue;
    Image image;
    try {
      image = load_image(r.path);
    } catch (const Error& e) {
      throw Error("cannot load image '" + r.id + "': " + e.what());
    }
    const auto crops = crop_rois(image, it->second, pad_fraction);
    for (std::size_t k = 0; k < crops.size(); ++k) {
      ImageRecord c;
      c.id = r.id + "__crop" + std::to_string(k);
      c.path = out_dir / (c.id + ".png");
      c.label = r.label;
      c.width = crops[k].width();
      c.height = crops[k].height();
      c.split = r.split;
      c.provenance = Provenance::kCrop;
      c.source = r.id;
      c.derivation = "crop:" + std::to_string(k);
      save_image(c.path, crops[k]);
      out.push_back(std::move(c));
    }
  }
  return Manifest(std::move(out));
}

std::vector<EnsemblePrediction> predict_manifest(
    const Manifest& manifest, std::span<const NamedModel> models,
    const std::map<std::string, DetectionResult>& detections, int resolution,
    double pad_fraction) {
  std::vector<EnsemblePrediction> out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records()) {
    Image image;
    try {
      image = load_image(r.path);
    } catch (const Error& e) {
      throw Error("cannot load image '" + r.id + "': " + e.what());
    }
    const auto it = detections.find(r.id);
    const DetectionResult none{r.id, {}};
    out.push_back(predict_image(image, r.id, models, it == detections.end() ? none : it->second,
                                resolution, pad_fraction));
  }
  return out;
}

ConfusionMatrix confusion_from_predictions(const Manifest& truth,
                                           std::span<const EnsemblePrediction> predictions) {
  std::map<std::string_view, SpeciesLabel> by_id;
  for (const auto& p : predictions) by_id.emplace(p.image_id, p.label);
  std::vector<SpeciesLabel> t, p;
  for (const auto& r : truth.records()) {
    if (!r.label) continue;
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw Error("no prediction for '" + r.id + "'");
    t.push_back(*r.label);
    p.push_back(it->second);
  }
  if (t.empty()) throw Error("truth manifest has no labeled records");
  return build_confusion(t, p);
}

namespace {

// Files and directories written by one run, removed if the run fails.
class ArtifactTracker {
 public:
  void file(const fs::path& p) { files_.push_back(p); }
  // Owned output directory: wiped now, removed on failure.
  fs::path fresh_dir(const fs::path& p) {
    fs::remove_all(p);
    fs::create_directories(p);
    dirs_.push_back(p);
    return p;
  }
  void rollback() noexcept {
    std::error_code ec;
    for (const auto& f : files_) {
      fs::remove(f, ec);
      fs::path partial = f;
      partial += ".partial";
      fs::remove(partial, ec);
    }
    for (const auto& d : dirs_) fs::remove_all(d, ec);
  }

 private:
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
};

}  // namespace

RunResult run_end_to_end(const RunConfig& config, const ProgressSink& progress) {
  auto note = [&](std::string_view stage, const std::string& msg) {
    if (progress) progress(stage, msg);
  };
  if (const auto problems = validate_config(config); !problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += " " + p.field + " (" + p.reason + ");";
    throw StageError("config", msg);
  }

  ArtifactTracker tracker;
  RunResult result;
  RunArtifacts& a = result.artifacts;
  const fs::path& wd = config.work_dir;
  std::string stage = "ingest";
  auto save_tracked_manifest = [&](const fs::path& p, const Manifest& m) {
    tracker.file(p);
    save_manifest(p, m);
  };
  auto save_tracked_text = [&](const fs::path& p, const std::string& text) {
    tracker.file(p);
    write_file_atomic(p, text);
  };

  try {
    fs::create_directories(wd);
    save_tracked_text(wd / "run.config.json", to_json(config));
    const Manifest train_all = load_manifest(config.train_manifest);
    const Manifest test = load_manifest(config.test_manifest);
    note(stage, std::to_string(train_all.size()) + " training and " +
                    std::to_string(test.size()) + " test records");

    stage = "split";
    auto [train, val] = split_train_val(train_all, config.val_fraction, config.seed);
    a.train_split = wd / "splits" / "train.manifest";
    a.val_split = wd / "splits" / "val.manifest";
    save_tracked_manifest(a.train_split, train);
    save_tracked_manifest(a.val_split, val);
    note(stage, std::to_string(train.size()) + " train / " + std::to_string(val.size()) + " val");

    stage = "detect";
    auto backend = make_detector(config.detector);
    std::vector<DetectionResult> dets;
    for (const Manifest* m : std::initializer_list<const Manifest*>{&train, &val, &test}) {
      auto part = detect_manifest(*m, *backend, config.score_threshold, config.bird_category);
      dets.insert(dets.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
    }
    std::map<std::string, DetectionResult> det_map;
    for (const auto& d : dets) det_map[d.image_id] = d;
    {
      std::ostringstream text;
      write_fixture_detections(text, dets);
      a.detections = wd / "detections.txt";
      save_tracked_text(a.detections, text.str());
    }
    note(stage, std::to_string(std::count_if(dets.begin(), dets.end(),
                                             [](const auto& d) { return d.boxes.empty(); })) +
                    " image(s) without a bird box");

    stage = "crop";
    const fs::path crop_dir = tracker.fresh_dir(wd / "crops");
    const Manifest crops_train = make_crops(train, det_map, config.pad_fraction, crop_dir);
    const Manifest crops_val = make_crops(val, det_map, config.pad_fraction, crop_dir);
    a.crops_train = wd / "crops_train.manifest";
    a.crops_val = wd / "crops_val.manifest";
    save_tracked_manifest(a.crops_train, crops_train);
    save_tracked_manifest(a.crops_val, crops_val);
    note(stage, std::to_string(crops_train.size() + crops_val.size()) + " crops");

    stage = "augment";
    const fs::path aug_dir = tracker.fresh_dir(wd / "augmented");
    Manifest stage1_train = train;
    Manifest stage2_train = crops_train;
    if (config.augment) {
      auto res = augment_manifest(train, default_policy(), derive_seed(config.seed, 1),
                                  aug_dir / "originals");
      stage1_train = std::move(res.manifest);
      note(stage, "originals:\n" + format_count_report(res.counts));
    }
    if (config.augment_crops) {
      auto res = augment_manifest(crops_train, default_policy(), derive_seed(config.seed, 2),
                                  aug_dir / "crops", /*allow_overfull=*/true);
      stage2_train = std::move(res.manifest);
      note(stage, "crops:\n" + format_count_report(res.counts));
    }
    a.augmented_train = wd / "augmented_train.manifest";
    a.augmented_crops_train = wd / "augmented_crops_train.manifest";
    save_tracked_manifest(a.augmented_train, stage1_train);
    save_tracked_manifest(a.augmented_crops_train, stage2_train);

    stage = "train";
    std::vector<BackboneHandle> finals;
    for (const auto& spec : config.backbones) {
      const std::uint64_t seed = derive_seed(config.seed, stable_hash(spec.name));
      const fs::path stage1_path = wd / "checkpoints" / (spec.name + ".stage1.ckpt");
      const fs::path stage2_path = wd / "checkpoints" / (spec.name + ".stage2.ckpt");
      std::optional<BackboneHandle> after_stage1;
      if (auto resume = tagged_path(spec.stage2_init, "checkpoint")) {
        after_stage1 = load_checkpoint(*resume);
        note(stage, spec.name + ": stage 2 resumes from " + resume->string());
      } else {
        BackboneHandle initial = [&] {
          if (auto ckpt = tagged_path(spec.init, "checkpoint")) return load_checkpoint(*ckpt);
          if (auto src = tagged_path(spec.init, "pretrained")) {
            return build_backbone(spec.kind, InitMode::kPretrained, *src, seed);
          }
          return build_backbone(spec.kind, InitMode::kFresh, std::nullopt, seed);
        }();
        if (initial.kind() != spec.kind) {
          throw Error(spec.name + ": initial weights are " +
                      std::string(to_string(initial.kind())));
        }
        after_stage1 = run_stage(initial, stage1_train, val, config.stage1, seed);
        tracker.file(stage1_path);
        tracker.file(checkpoint_header_path(stage1_path));
        save_checkpoint(stage1_path, *after_stage1);
        a.checkpoints.push_back(stage1_path);
      }
      BackboneHandle final_model = run_stage(*after_stage1, stage2_train, crops_val, config.stage2, seed);
      tracker.file(stage2_path);
      tracker.file(checkpoint_header_path(stage2_path));
      save_checkpoint(stage2_path, final_model);
      a.checkpoints.push_back(stage2_path);
      if (!final_model.history().empty()) {
        const auto& last = final_model.history().back();
        note(stage, spec.name + ": epoch " + std::to_string(last.epoch) + " loss " +
                        format_double(last.loss) + " train acc " +
                        format_double(last.train_accuracy));
      }
      finals.push_back(std::move(final_model));
    }

    stage = "predict";
    std::vector<NamedModel> models;
    for (std::size_t i = 0; i < finals.size(); ++i) {
      models.push_back({config.backbones[i].name, &finals[i]});
    }
    const auto predictions = predict_manifest(test, models, det_map,
                                              config.stage2.input_resolution, config.pad_fraction);
    {
      std::ostringstream text;
      write_predictions(text, predictions);
      a.predictions = wd / "predictions.txt";
      save_tracked_text(a.predictions, text.str());
    }

    stage = "evaluate";
    const auto matrix = confusion_from_predictions(test, predictions);
    result.metrics = report(matrix);
    a.confusion = wd / "confusion.txt";
    a.metrics = wd / "metrics.txt";
    save_tracked_text(a.confusion, format_confusion(matrix));
    save_tracked_text(a.metrics, format_report(result.metrics));
    note(stage, "micro accuracy " + format_double(result.metrics.micro_accuracy));
  } catch (const std::exception& e) {
    tracker.rollback();
    throw StageError(stage, e.what());
  }
  return result;
}

}  // namespace birdcls
