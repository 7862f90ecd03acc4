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

#include "birdcls/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "birdcls/dataset.h"
#include "birdcls/error.h"
#include "birdcls/io.h"
#include "birdcls/random.h"

namespace birdcls {

namespace fs = std::filesystem;

namespace {

enum class Shape { kCircle, kSquare, kTriangle, kCross };

constexpr std::array<std::array<double, 3>, 4> kHues = {{
    {220, 40, 40},   // red
    {40, 180, 60},   // green
    {40, 80, 220},   // blue
    {230, 210, 40},  // yellow
}};

bool inside(Shape shape, double u, double v) {
  // (u, v) in [-1, 1]^2 relative to the shape's box.
  switch (shape) {
    case Shape::kCircle: return u * u + v * v <= 1.0;
    case Shape::kSquare: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case Shape::kTriangle: return v >= -1.0 && v <= 1.0 && std::abs(u) <= (v + 1.0) / 2.0;
    case Shape::kCross: return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
  }
  return false;
}

void paint(Image& img, Shape shape, int x0, int y0, int size, const std::array<double, 3>& rgb,
           Rng& rng) {
  const double half = size / 2.0;
  for (int y = y0; y < y0 + size; ++y) {
    for (int x = x0; x < x0 + size; ++x) {
      if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) continue;
      const double u = (x + 0.5 - x0 - half) / half;
      const double v = (y + 0.5 - y0 - half) / half;
      if (!inside(shape, u, v)) continue;
      const double shade = rng.uniform(-12.0, 12.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = clamp_to_byte(rgb[c] + shade);
    }
  }
}

}  // namespace

SynthSample draw_synthetic(SpeciesLabel species, std::uint64_t seed, int image_size) {
  if (image_size < 32) throw Error("synthetic images must be at least 32 pixels");
  Rng rng(seed);
  const int n = image_size;
  Image img(n, n);

  // Muted background with low-saturation clutter.
  const double base = rng.uniform(70, 170);
  const std::array<double, 3> tint = {rng.uniform(-15, 15), rng.uniform(-15, 15),
                                      rng.uniform(-15, 15)};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double g = base + rng.uniform(-10, 10);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = clamp_to_byte(g + tint[c]);
    }
  }
  const int clutter = 6 + static_cast<int>(rng.below(6));
  for (int i = 0; i < clutter; ++i) {
    const int w = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n / 3)));
    const int h = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n / 3)));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const double g = rng.uniform(30, 230);
    const std::array<double, 3> jitter = {rng.uniform(-20, 20), rng.uniform(-20, 20),
                                          rng.uniform(-20, 20)};
    for (int yy = y; yy < std::min(n, y + h); ++yy) {
      for (int xx = x; xx < std::min(n, x + w); ++xx) {
        for (int c = 0; c < 3; ++c) img.at(xx, yy, c) = clamp_to_byte(g + jitter[c]);
      }
    }
  }

  const auto shape = static_cast<Shape>(species.index() / 4);
  std::array<double, 3> color = kHues[species.index() % 4];
  for (double& c : color) c += rng.uniform(-20, 20);
  const int size = static_cast<int>(std::lround(n * rng.uniform(0.32, 0.5)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - size + 1)));
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - size + 1)));
  paint(img, shape, x0, y0, size, color, rng);

  SynthSample out{std::move(img), BoundingBox{x0, y0, size, size, 0.0, "bird"}};
  return out;
}

SynthDataset generate_synthetic(const fs::path& out_dir, const SynthOptions& options) {
  if (options.train_per_class < 2) throw Error("train_per_class must be at least 2");
  if (options.test_per_class < 0) throw Error("test_per_class must be non-negative");
  fs::create_directories(out_dir);
  const fs::path root = fs::absolute(out_dir);

  std::vector<ImageRecord> train, test;
  std::vector<DetectionResult> detections;
  Rng box_rng(derive_seed(options.seed, 0xb0c5));

  auto emit = [&](SpeciesLabel label, const std::string& id, const fs::path& rel, Split split,
                  std::uint64_t seed, bool with_boxes) {
    auto sample = draw_synthetic(label, seed, options.image_size);
    save_image(root / rel, sample.image);
    ImageRecord r;
    r.id = id;
    r.path = root / rel;
    r.label = label;
    r.width = sample.image.width();
    r.height = sample.image.height();
    r.split = split;
    (split == Split::kTest ? test : train).push_back(r);
    if (!with_boxes) return;
    DetectionResult det{id, {}};
    sample.box.score = std::round(box_rng.uniform(0.8, 0.99) * 1000.0) / 1000.0;
    det.boxes.push_back(sample.box);
    if (options.distractor_boxes) {
      const int n = options.image_size;
      const auto pick = [&] { return static_cast<int>(box_rng.below(static_cast<std::uint64_t>(n / 2))); };
      if (box_rng.uniform01() < 0.5) {
        det.boxes.push_back({pick(), pick(), n / 4, n / 3,
                             std::round(box_rng.uniform(0.6, 0.99) * 1000.0) / 1000.0, "person"});
      }
      if (box_rng.uniform01() < 0.5) {
        det.boxes.push_back({pick(), pick(), n / 5, n / 5,
                             std::round(box_rng.uniform(0.1, 0.45) * 1000.0) / 1000.0, "bird"});
      }
    }
    std::stable_sort(det.boxes.begin(), det.boxes.end(),
                     [](const BoundingBox& a, const BoundingBox& b) { return a.score > b.score; });
    detections.push_back(std::move(det));
  };

  char name[64];
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    const SpeciesLabel label(c);
    for (int i = 0; i < options.train_per_class; ++i) {
      std::snprintf(name, sizeof(name), "%s_%03d", std::string(label.code()).c_str(), i);
      emit(label, name, fs::path("images/train") / label.code() / (std::string(name) + ".png"),
           Split::kTrain, derive_seed(options.seed, 1, c, i), true);
    }
  }
  // Test images interleave classes; the first test_without_boxes of them
  // get no fixture entry.
  int index = 0;
  for (int i = 0; i < options.test_per_class; ++i) {
    for (std::size_t c = 0; c < kNumSpecies; ++c, ++index) {
      std::snprintf(name, sizeof(name), "test_%04d", index);
      emit(SpeciesLabel(c), name, fs::path("images/test") / (std::string(name) + ".png"),
           Split::kTest, derive_seed(options.seed, 2, c, i), index >= options.test_without_boxes);
    }
  }

  SynthDataset out;
  out.train_manifest = root / "train.manifest";
  out.test_manifest = root / "test.manifest";
  out.detections = root / "detections.txt";
  out.config = root / "run.json";
  save_manifest(out.train_manifest, Manifest(std::move(train)));
  save_manifest(out.test_manifest, Manifest(std::move(test)));
  std::ostringstream det_text;
  write_fixture_detections(det_text, detections);
  write_file_atomic(out.detections, det_text.str());

  nlohmann::ordered_json config = {
      {"seed", options.seed},
      {"train_manifest", "train.manifest"},
      {"test_manifest", "test.manifest"},
      {"detector", "fixture:detections.txt"},
      {"work_dir", "run"},
      {"val_fraction", 0.2},
      {"score_threshold", 0.5},
      {"pad_fraction", 0.0},
      {"augment", true},
      {"augment_crops", true},
      {"stage1",
       {{"epochs", 6}, {"learning_rate", 3e-3}, {"batch_size", 16}, {"resolution", 48}}},
      {"stage2",
       {{"epochs", 4}, {"learning_rate", 1e-3}, {"batch_size", 16}, {"resolution", 48}}},
      {"backbones",
       {{{"name", "ref_a"}, {"kind", "reference_cnn"}, {"init", "fresh"}},
        {{"name", "ref_b"}, {"kind", "reference_cnn"}, {"init", "fresh"}}}},
  };
  write_file_atomic(out.config, config.dump(2) + "\n");
  return out;
}

}  // namespace birdcls
