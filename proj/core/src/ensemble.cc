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

#include "birdcls/ensemble.h"

#include <fstream>
#include <ostream>

#include "birdcls/error.h"
#include "birdcls/io.h"

namespace birdcls {

namespace {

struct Entry {
  double prob;
  std::size_t cls;
  int crop;
  const std::string* model;
};

// True when a beats b.
bool better(const Entry& a, const Entry& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  if (a.cls != b.cls) return a.cls < b.cls;
  if (a.crop != b.crop) return a.crop < b.crop;
  return *a.model < *b.model;
}

}  // namespace

EnsemblePrediction fuse(std::span<const ScoredCandidate> candidates) {
  if (candidates.empty()) throw Error("fuse needs at least one candidate");
  Entry best{-1.0, 0, 0, nullptr};
  for (const auto& c : candidates) {
    if (c.crop_index < -1) throw Error("crop index below -1");
    for (std::size_t k = 0; k < kNumSpecies; ++k) {
      const Entry e{c.vector.probs[k], k, c.crop_index, &c.model_id};
      if (best.model == nullptr || better(e, best)) best = e;
    }
  }
  EnsemblePrediction out;
  out.label = SpeciesLabel(best.cls);
  out.confidence = best.prob;
  out.source_model = *best.model;
  out.source_crop = best.crop;
  out.fallback_used = best.crop == -1;
  return out;
}

std::vector<ScoredCandidate> score_candidates(const Image& image,
                                              std::span<const NamedModel> models,
                                              const DetectionResult& detections, int resolution,
                                              double pad_fraction) {
  if (models.empty()) throw Error("ensemble needs at least one model");
  std::vector<ScoredCandidate> candidates;
  if (detections.boxes.empty()) {
    for (const auto& m : models) {
      candidates.push_back({m.id, -1, predict(*m.model, image, resolution)});
    }
    return candidates;
  }
  const auto crops = crop_rois(image, detections, pad_fraction);
  for (std::size_t i = 0; i < crops.size(); ++i) {
    for (const auto& m : models) {
      candidates.push_back({m.id, static_cast<int>(i), predict(*m.model, crops[i], resolution)});
    }
  }
  return candidates;
}

EnsemblePrediction predict_image(const Image& image, const std::string& image_id,
                                 std::span<const NamedModel> models,
                                 const DetectionResult& detections, int resolution,
                                 double pad_fraction) {
  std::vector<ScoredCandidate> candidates;
  try {
    candidates = score_candidates(image, models, detections, resolution, pad_fraction);
  } catch (const Error& e) {
    throw Error("prediction failed for '" + image_id + "': " + e.what());
  }
  EnsemblePrediction out = fuse(candidates);
  out.image_id = image_id;
  return out;
}

void write_predictions(std::ostream& out, std::span<const EnsemblePrediction> predictions) {
  for (const auto& p : predictions) {
    out << p.image_id << ' ' << p.label.code() << ' ' << format_double(p.confidence) << ' '
        << (p.fallback_used ? 1 : 0) << ' ' << p.source_model << ' ' << p.source_crop << '\n';
  }
}

std::vector<EnsemblePrediction> parse_predictions(std::istream& in,
                                                  const std::string& source_name) {
  std::vector<EnsemblePrediction> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto cols = split_whitespace(line);
    if (cols.empty() || cols[0].front() == '#') continue;
    if (cols.size() != 6) {
      throw ParseError(source_name, row, "expected 6 columns, got " + std::to_string(cols.size()));
    }
    try {
      EnsemblePrediction p;
      p.image_id = std::string(cols[0]);
      p.label = SpeciesLabel::parse(cols[1]);
      p.confidence = parse_double(cols[2]);
      if (cols[3] != "0" && cols[3] != "1") throw Error("fallback flag must be 0 or 1");
      p.fallback_used = cols[3] == "1";
      p.source_model = std::string(cols[4]);
      p.source_crop = static_cast<int>(parse_int(cols[5]));
      if (p.fallback_used != (p.source_crop == -1)) {
        throw Error("fallback flag disagrees with source crop");
      }
      out.push_back(std::move(p));
    } catch (const Error& e) {
      throw ParseError(source_name, row, e.what());
    }
  }
  return out;
}

std::vector<EnsemblePrediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("predictions not found: " + path.string());
  return parse_predictions(in, path.string());
}

}  // namespace birdcls
