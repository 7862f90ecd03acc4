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
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "birdcls/image.h"

namespace birdcls {

inline constexpr std::string_view kDefaultBirdCategory = "bird";
inline constexpr double kDefaultScoreThreshold = 0.5;

struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;
  double score = 0.0;
  std::string category;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct DetectionResult {
  std::string image_id;
  std::vector<BoundingBox> boxes;  // descending score

  friend bool operator==(const DetectionResult&, const DetectionResult&) = default;
};

// Source of raw, unfiltered detections. A handle is used from one thread at
// a time; FixtureDetector is additionally safe to share.
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::vector<BoundingBox> detect(const Image& image, std::string_view image_id) = 0;
  virtual std::string name() const = 0;
};

// Replays boxes from a fixture file. Unknown image ids yield no boxes.
class FixtureDetector : public DetectorBackend {
 public:
  explicit FixtureDetector(std::map<std::string, DetectionResult> table);
  static std::unique_ptr<FixtureDetector> from_file(const std::filesystem::path& path);

  std::vector<BoundingBox> detect(const Image& image, std::string_view image_id) override;
  std::string name() const override { return "fixture"; }

 private:
  std::map<std::string, DetectionResult, std::less<>> table_;
};

// Pretrained instance-detection network run through OpenCV's dnn module.
// `model` is a weights file (frozen TF graph, ONNX, ...), `config` an optional
// companion file, `labels` an optional newline-separated category list
// indexed by the network's class id (COCO names are used otherwise). Only the
// box output is consumed; masks are ignored.
class DnnDetector : public DetectorBackend {
 public:
  DnnDetector(const std::filesystem::path& model, const std::filesystem::path& config = {},
              const std::filesystem::path& labels = {}, int input_size = 800);
  ~DnnDetector() override;

  std::vector<BoundingBox> detect(const Image& image, std::string_view image_id) override;
  std::string name() const override { return "model"; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "fixture:<path>" or "model:<weights>[,<config>[,<labels>]]".
std::unique_ptr<DetectorBackend> make_detector(std::string_view spec);

// Keeps boxes of `bird_category` scoring at least `score_threshold`, clamps
// them into the image and sorts by descending score (stable). Backend errors
// are rethrown with the image id attached.
DetectionResult detect_birds(const Image& image, std::string_view image_id,
                             DetectorBackend& backend,
                             double score_threshold = kDefaultScoreThreshold,
                             std::string_view bird_category = kDefaultBirdCategory);

BoundingBox clamp_box(const BoundingBox& box, int image_width, int image_height);

// Pads each side by pad_fraction of the box extent, rounding outward, then
// clamps to the image. One crop per box, in box order.
std::vector<Image> crop_rois(const Image& image, const DetectionResult& result,
                             double pad_fraction = 0.0);

// Fixture format: one box per line, `image_id x y w h score category`.
// Blank lines and '#' comments are skipped. Boxes are sorted per image by
// descending score; categories are not filtered here.
std::map<std::string, DetectionResult> load_fixture_detections(const std::filesystem::path& path);
std::map<std::string, DetectionResult> parse_fixture_detections(std::istream& in,
                                                                const std::string& source_name);
void write_fixture_detections(std::ostream& out, const std::vector<DetectionResult>& results);

}  // namespace birdcls
