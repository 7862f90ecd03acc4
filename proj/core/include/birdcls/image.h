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
#include <span>
#include <vector>

namespace birdcls {

// Interleaved 8-bit RGB raster, row-major. uint8 storage makes the [0, 255]
// channel range an invariant of the type; transforms compute in double and
// round-and-clamp on the way back.
class Image {
 public:
  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0);
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  std::uint8_t& at(int x, int y, int c) { return pixels_[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels_[index(x, y, c)]; }

  std::span<std::uint8_t> pixels() { return pixels_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

std::uint8_t clamp_to_byte(double v);

// Codec-backed IO. Any format OpenCV can decode is accepted; writes pick the
// format from the extension (PNG recommended: lossless and byte-stable).
Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& image);
// Reads only what is needed to learn the dimensions.
std::pair<int, int> probe_image_size(const std::filesystem::path& path);

// Area-averaging when shrinking, bilinear when enlarging.
Image resize(const Image& image, int width, int height);
// Rectangle must lie within the image.
Image crop(const Image& image, int x, int y, int width, int height);

}  // namespace birdcls
