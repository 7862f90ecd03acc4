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

#include "birdcls/detection.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "birdcls/error.h"
#include "birdcls/io.h"

namespace birdcls {

namespace fs = std::filesystem;

namespace {

void sort_by_score(std::vector<BoundingBox>& boxes) {
  std::stable_sort(boxes.begin(), boxes.end(),
                   [](const BoundingBox& a, const BoundingBox& b) { return a.score > b.score; });
}

// COCO category names indexed by (category id - 1), including the ids the
// 2017 release left unused. Spaces replaced so names stay single tokens.
const std::vector<std::string>& coco_names() {
  static const std::vector<std::string> names = {
      "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
      "traffic_light", "fire_hydrant", "street_sign", "stop_sign", "parking_meter", "bench",
      "bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe",
      "hat", "backpack", "umbrella", "shoe", "eye_glasses", "handbag", "tie", "suitcase",
      "frisbee", "skis", "snowboard", "sports_ball", "kite", "baseball_bat", "baseball_glove",
      "skateboard", "surfboard", "tennis_racket", "bottle", "plate", "wine_glass", "cup", "fork",
      "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange", "broccoli", "carrot",
      "hot_dog", "pizza", "donut", "cake", "chair", "couch", "potted_plant", "bed", "mirror",
      "dining_table", "window", "desk", "toilet", "door", "tv", "laptop", "mouse", "remote",
      "keyboard", "cell_phone", "microwave", "oven", "toaster", "sink", "refrigerator",
      "blender", "book", "clock", "vase", "scissors", "teddy_bear", "hair_drier", "toothbrush"};
  return names;
}

}  // namespace

FixtureDetector::FixtureDetector(std::map<std::string, DetectionResult> table)
    : table_(std::make_move_iterator(table.begin()), std::make_move_iterator(table.end())) {}

std::unique_ptr<FixtureDetector> FixtureDetector::from_file(const fs::path& path) {
  return std::make_unique<FixtureDetector>(load_fixture_detections(path));
}

std::vector<BoundingBox> FixtureDetector::detect(const Image&, std::string_view image_id) {
  const auto it = table_.find(image_id);
  if (it == table_.end()) return {};
  return it->second.boxes;
}

struct DnnDetector::Impl {
  cv::dnn::Net net;
  std::vector<std::string> labels;
  int input_size = 800;
  std::mutex mutex;
};

DnnDetector::DnnDetector(const fs::path& model, const fs::path& config, const fs::path& labels,
                         int input_size)
    : impl_(std::make_unique<Impl>()) {
  if (!fs::exists(model)) throw Error("detector model not found: " + model.string());
  if (!config.empty() && !fs::exists(config)) {
    throw Error("detector config not found: " + config.string());
  }
  try {
    impl_->net = cv::dnn::readNet(model.string(), config.string());
  } catch (const cv::Exception& e) {
    throw Error("cannot load detector model " + model.string() + ": " + e.what());
  }
  if (impl_->net.empty()) throw Error("cannot load detector model " + model.string());
  if (labels.empty()) {
    impl_->labels = coco_names();
  } else {
    std::ifstream in(labels);
    if (!in) throw Error("detector labels not found: " + labels.string());
    std::string line;
    while (std::getline(in, line)) {
      std::replace(line.begin(), line.end(), ' ', '_');
      impl_->labels.push_back(line);
    }
  }
  impl_->input_size = input_size;
}

DnnDetector::~DnnDetector() = default;

std::vector<BoundingBox> DnnDetector::detect(const Image& image, std::string_view) {
  cv::Mat rgb(image.height(), image.width(), CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels().data()));
  const cv::Mat blob = cv::dnn::blobFromImage(
      rgb, 1.0, cv::Size(impl_->input_size, impl_->input_size), cv::Scalar(), false, false);
  cv::Mat out;
  {
    std::lock_guard lock(impl_->mutex);
    impl_->net.setInput(blob);
    const auto names = impl_->net.getLayerNames();
    const bool mask_rcnn =
        std::find(names.begin(), names.end(), "detection_out_final") != names.end();
    try {
      out = mask_rcnn ? impl_->net.forward("detection_out_final") : impl_->net.forward();
    } catch (const cv::Exception& e) {
      throw Error(std::string("detector forward failed: ") + e.what());
    }
  }
  // Rows of (batch, class, score, left, top, right, bottom), coordinates
  // normalized to [0, 1].
  if (out.total() % 7 != 0) throw Error("unexpected detector output shape");
  const cv::Mat rows(static_cast<int>(out.total() / 7), 7, CV_32F, out.ptr<float>());
  std::vector<BoundingBox> boxes;
  for (int i = 0; i < rows.rows; ++i) {
    const float* r = rows.ptr<float>(i);
    const auto cls = static_cast<std::size_t>(r[1]);
    BoundingBox b;
    b.category = cls < impl_->labels.size() ? impl_->labels[cls] : "class" + std::to_string(cls);
    b.score = std::clamp(static_cast<double>(r[2]), 0.0, 1.0);
    const int x0 = static_cast<int>(std::floor(r[3] * image.width()));
    const int y0 = static_cast<int>(std::floor(r[4] * image.height()));
    const int x1 = static_cast<int>(std::ceil(r[5] * image.width()));
    const int y1 = static_cast<int>(std::ceil(r[6] * image.height()));
    b.x = x0;
    b.y = y0;
    b.w = std::max(1, x1 - x0);
    b.h = std::max(1, y1 - y0);
    boxes.push_back(std::move(b));
  }
  return boxes;
}

std::unique_ptr<DetectorBackend> make_detector(std::string_view spec) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw Error("detector must be fixture:<path> or model:<path>, got '" + std::string(spec) + "'");
  }
  const auto kind = spec.substr(0, colon);
  const std::string rest(spec.substr(colon + 1));
  if (kind == "fixture") return FixtureDetector::from_file(rest);
  if (kind == "model") {
    std::vector<std::string> parts;
    std::stringstream ss(rest);
    for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
    parts.resize(3);
    return std::make_unique<DnnDetector>(parts[0], parts[1], parts[2]);
  }
  throw Error("unknown detector backend '" + std::string(kind) + "'");
}

BoundingBox clamp_box(const BoundingBox& box, int image_width, int image_height) {
  BoundingBox out = box;
  const int x0 = std::clamp(box.x, 0, image_width - 1);
  const int y0 = std::clamp(box.y, 0, image_height - 1);
  const int x1 = std::clamp(box.x + box.w, x0 + 1, image_width);
  const int y1 = std::clamp(box.y + box.h, y0 + 1, image_height);
  out.x = x0;
  out.y = y0;
  out.w = x1 - x0;
  out.h = y1 - y0;
  return out;
}

DetectionResult detect_birds(const Image& image, std::string_view image_id,
                             DetectorBackend& backend, double score_threshold,
                             std::string_view bird_category) {
  std::vector<BoundingBox> raw;
  try {
    raw = backend.detect(image, image_id);
  } catch (const std::exception& e) {
    throw Error("detection failed for '" + std::string(image_id) + "': " + e.what());
  }
  DetectionResult result{std::string(image_id), {}};
  for (const auto& box : raw) {
    if (box.category != bird_category || box.score < score_threshold) continue;
    result.boxes.push_back(clamp_box(box, image.width(), image.height()));
  }
  sort_by_score(result.boxes);
  return result;
}

std::vector<Image> crop_rois(const Image& image, const DetectionResult& result,
                             double pad_fraction) {
  if (pad_fraction < 0.0) throw Error("pad_fraction must be non-negative");
  std::vector<Image> crops;
  crops.reserve(result.boxes.size());
  for (const auto& box : result.boxes) {
    const double px = pad_fraction * box.w;
    const double py = pad_fraction * box.h;
    BoundingBox padded = box;
    padded.x = static_cast<int>(std::floor(box.x - px));
    padded.y = static_cast<int>(std::floor(box.y - py));
    padded.w = static_cast<int>(std::ceil(box.x + box.w + px)) - padded.x;
    padded.h = static_cast<int>(std::ceil(box.y + box.h + py)) - padded.y;
    const auto c = clamp_box(padded, image.width(), image.height());
    crops.push_back(crop(image, c.x, c.y, c.w, c.h));
  }
  return crops;
}

std::map<std::string, DetectionResult> parse_fixture_detections(std::istream& in,
                                                                const std::string& source_name) {
  std::map<std::string, DetectionResult> table;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto cols = split_whitespace(line);
    if (cols.empty() || cols[0].front() == '#') continue;
    if (cols.size() != 7) {
      throw ParseError(source_name, row, "expected 7 columns, got " + std::to_string(cols.size()));
    }
    BoundingBox box;
    try {
      box.x = static_cast<int>(parse_int(cols[1]));
      box.y = static_cast<int>(parse_int(cols[2]));
      box.w = static_cast<int>(parse_int(cols[3]));
      box.h = static_cast<int>(parse_int(cols[4]));
      box.score = parse_double(cols[5]);
    } catch (const Error& e) {
      throw ParseError(source_name, row, e.what());
    }
    if (box.w < 1 || box.h < 1) {
      throw ParseError(source_name, row, "box extent must be positive");
    }
    if (!(box.score >= 0.0 && box.score <= 1.0)) {
      throw ParseError(source_name, row, "score outside [0, 1]");
    }
    box.category = std::string(cols[6]);
    auto& entry = table[std::string(cols[0])];
    entry.image_id = std::string(cols[0]);
    entry.boxes.push_back(std::move(box));
  }
  for (auto& [id, result] : table) sort_by_score(result.boxes);
  return table;
}

std::map<std::string, DetectionResult> load_fixture_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("detection fixture not found: " + path.string());
  return parse_fixture_detections(in, path.string());
}

void write_fixture_detections(std::ostream& out, const std::vector<DetectionResult>& results) {
  for (const auto& result : results) {
    for (const auto& b : result.boxes) {
      out << result.image_id << ' ' << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << ' '
          << format_double(b.score) << ' ' << b.category << '\n';
    }
  }
}

}  // namespace birdcls
