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

#include "birdcls/image.h"

#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "birdcls/error.h"

namespace birdcls {

namespace fs = std::filesystem;

Image::Image(int width, int height, std::uint8_t fill)
    : width_(width), height_(height),
      pixels_(static_cast<std::size_t>(width) * height * 3, fill) {
  if (width < 1 || height < 1) {
    throw Error("image dimensions must be positive, got " + std::to_string(width) + "x" +
                std::to_string(height));
  }
}

Image::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) {
    throw Error("image dimensions must be positive, got " + std::to_string(width) + "x" +
                std::to_string(height));
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw Error("pixel buffer does not match " + std::to_string(width) + "x" +
                std::to_string(height) + "x3");
  }
}

std::uint8_t clamp_to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

namespace {

cv::Mat as_mat(const Image& image) {
  return cv::Mat(image.height(), image.width(), CV_8UC3,
                 const_cast<std::uint8_t*>(image.pixels().data()));
}

Image from_mat(const cv::Mat& mat) {
  cv::Mat contiguous = mat.isContinuous() ? mat : mat.clone();
  const auto* data = contiguous.ptr<std::uint8_t>();
  std::vector<std::uint8_t> pixels(data, data + contiguous.total() * 3);
  return Image(contiguous.cols, contiguous.rows, std::move(pixels));
}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw Error("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb);
}

void save_image(const fs::path& path, const Image& image) {
  if (image.empty()) throw Error("refusing to write an empty image: " + path.string());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat bgr;
  cv::cvtColor(as_mat(image), bgr, cv::COLOR_RGB2BGR);
  // Encode in memory and publish atomically.
  std::vector<std::uint8_t> bytes;
  if (!cv::imencode(path.extension().string(), bgr, bytes)) {
    throw Error("cannot encode image: " + path.string());
  }
  fs::path tmp = path;
  tmp += ".partial";
  {
    FILE* f = std::fopen(tmp.c_str(), "wb");
    if (f == nullptr) throw Error("cannot open " + tmp.string() + " for writing");
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    const bool closed = std::fclose(f) == 0;
    if (!ok || !closed) {
      fs::remove(tmp);
      throw Error("write failed: " + path.string());
    }
  }
  fs::rename(tmp, path);
}

std::pair<int, int> probe_image_size(const fs::path& path) {
  const Image image = load_image(path);
  return {image.width(), image.height()};
}

Image resize(const Image& image, int width, int height) {
  if (width < 1 || height < 1) throw Error("resize target must be positive");
  if (width == image.width() && height == image.height()) return image;
  const bool shrinking = width <= image.width() && height <= image.height();
  cv::Mat out;
  cv::resize(as_mat(image), out, cv::Size(width, height), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return from_mat(out);
}

Image crop(const Image& image, int x, int y, int width, int height) {
  if (width < 1 || height < 1 || x < 0 || y < 0 || x + width > image.width() ||
      y + height > image.height()) {
    throw Error("crop rectangle outside image");
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height * 3);
  for (int row = 0; row < height; ++row) {
    const auto src = image.pixels().subspan(
        (static_cast<std::size_t>(y + row) * image.width() + x) * 3,
        static_cast<std::size_t>(width) * 3);
    std::copy(src.begin(), src.end(), pixels.begin() + static_cast<std::ptrdiff_t>(row) * width * 3);
  }
  return Image(width, height, std::move(pixels));
}

}  // namespace birdcls
