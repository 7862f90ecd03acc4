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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "birdcls/dataset.h"
#include "birdcls/error.h"
#include "birdcls/detection.h"
#include "birdcls/ensemble.h"
#include "birdcls/evaluation.h"
#include "birdcls/training.h"

namespace birdcls {

struct BackboneSpec {
  std::string name;
  BackboneKind kind = BackboneKind::kReferenceCnn;
  // "fresh", "pretrained:<path>" or "checkpoint:<path>".
  std::string init = "fresh";
  // "previous_stage" or "checkpoint:<path>" (skips stage 1).
  std::string stage2_init = "previous_stage";
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path work_dir;
  std::string detector;  // make_detector() spec
  std::string bird_category{kDefaultBirdCategory};
  double score_threshold = kDefaultScoreThreshold;
  double pad_fraction = 0.0;
  double val_fraction = 0.2;
  bool augment = true;
  bool augment_crops = true;
  StageConfig stage1 = default_stage_config(StageKind::kOriginals);
  StageConfig stage2 = default_stage_config(StageKind::kCrops);
  std::vector<BackboneSpec> backbones;
};

// JSON document; relative paths resolve against the file's directory.
// `overrides` are "dotted.key=value" pairs applied before decoding, the value
// parsed as JSON when possible and as a string otherwise.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides = {});
std::string to_json(const RunConfig& config);

struct ConfigProblem {
  std::string field;
  std::string reason;

  friend bool operator==(const ConfigProblem&, const ConfigProblem&) = default;
};

// Empty iff the configuration can be executed.
std::vector<ConfigProblem> validate_config(const RunConfig& config);

// Raised by run_end_to_end; names the stage and, when known, the item.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// --- Stage building blocks, each reading and writing documented formats. ---

std::vector<DetectionResult> detect_manifest(const Manifest& manifest, DetectorBackend& backend,
                                             double score_threshold,
                                             std::string_view bird_category);

// Crops every ROI of every record into out_dir/<id>__crop<k>.png. Records
// without detections contribute nothing. Crop records inherit label and
// split and carry provenance kCrop.
Manifest make_crops(const Manifest& manifest,
                    const std::map<std::string, DetectionResult>& detections,
                    double pad_fraction, const std::filesystem::path& out_dir);

std::vector<EnsemblePrediction> predict_manifest(
    const Manifest& manifest, std::span<const NamedModel> models,
    const std::map<std::string, DetectionResult>& detections, int resolution,
    double pad_fraction);

// Throws when a labeled record has no prediction.
ConfusionMatrix confusion_from_predictions(const Manifest& truth,
                                           std::span<const EnsemblePrediction> predictions);

struct RunArtifacts {
  std::filesystem::path train_split, val_split;
  std::filesystem::path detections;
  std::filesystem::path crops_train, crops_val;
  std::filesystem::path augmented_train, augmented_crops_train;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path predictions;
  std::filesystem::path confusion;
  std::filesystem::path metrics;
};

struct RunResult {
  MetricsReport metrics;
  RunArtifacts artifacts;
};

using ProgressSink = std::function<void(std::string_view stage, std::string_view message)>;

// ingest -> split -> detect -> crop -> augment -> two-stage train per
// backbone -> ensemble predict -> evaluate, persisting every intermediate in
// config.work_dir. On failure every file written by this run is removed and a
// StageError is thrown.
RunResult run_end_to_end(const RunConfig& config, const ProgressSink& progress = {});

}  // namespace birdcls
