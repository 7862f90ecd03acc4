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

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "birdcls/backbone.h"
#include "birdcls/detection.h"
#include "birdcls/image.h"
#include "birdcls/species.h"
#include "birdcls/training.h"

namespace birdcls {

struct ScoredCandidate {
  std::string model_id;
  int crop_index = -1;  // -1: whole image
  PredictionVector vector;
};

struct EnsemblePrediction {
  std::string image_id;
  SpeciesLabel label{0};
  double confidence = 0.0;
  std::string source_model;
  int source_crop = -1;
  bool fallback_used = false;

  friend bool operator==(const EnsemblePrediction&, const EnsemblePrediction&) = default;
};

// Global maximum over every (candidate, class) probability. Exact ties go to
// the lower class index, then the lower crop index, then the smaller model
// id. The result's image_id is left empty. Throws on an empty list.
EnsemblePrediction fuse(std::span<const ScoredCandidate> candidates);

struct NamedModel {
  std::string id;
  const BackboneHandle* model = nullptr;
};

// With at least one box: every model scores every ROI crop and the results
// are fused. With none: every model scores the whole image and
// fallback_used is set.
EnsemblePrediction predict_image(const Image& image, const std::string& image_id,
                                 std::span<const NamedModel> models,
                                 const DetectionResult& detections, int resolution,
                                 double pad_fraction = 0.0);

// The candidates predict_image would fuse, in (crop, model) order.
std::vector<ScoredCandidate> score_candidates(const Image& image,
                                              std::span<const NamedModel> models,
                                              const DetectionResult& detections, int resolution,
                                              double pad_fraction = 0.0);

// Prediction file: `image_id predicted_code confidence fallback_flag
// source_model source_crop`, one line per image, fallback_flag 0/1.
void write_predictions(std::ostream& out, std::span<const EnsemblePrediction> predictions);
std::vector<EnsemblePrediction> load_predictions(const std::filesystem::path& path);
std::vector<EnsemblePrediction> parse_predictions(std::istream& in, const std::string& source_name);

}  // namespace birdcls
