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

#include "birdcls/image.h"
#include "birdcls/detection.h"
#include "birdcls/species.h"

namespace birdcls {

// Procedural stand-in dataset: each species is one (shape, colour) pair out
// of 4 shapes x 4 hues, drawn at a random position and size on a cluttered
// low-saturation background. The generator knows every shape's bounding box,
// which becomes the fixture detection for that image.
struct SynthOptions {
  std::uint64_t seed = 1;
  int image_size = 96;
  int train_per_class = 20;
  int test_per_class = 5;
  // Test images listed without any detection, exercising the whole-image
  // fallback.
  int test_without_boxes = 8;
  // Extra non-bird and low-score boxes in the fixture.
  bool distractor_boxes = true;
};

struct SynthSample {
  Image image;
  BoundingBox box;
};

SynthSample draw_synthetic(SpeciesLabel species, std::uint64_t seed, int image_size);

struct SynthDataset {
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path detections;
  std::filesystem::path config;  // run config for `run`
};

// Writes images/, train.manifest, test.manifest (labeled, split test),
// detections.txt and run.json under out_dir.
SynthDataset generate_synthetic(const std::filesystem::path& out_dir, const SynthOptions& options);

}  // namespace birdcls
