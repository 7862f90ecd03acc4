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

#include "birdcls/dnn_backbone.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <mutex>
#include <ostream>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "birdcls/error.h"
#include "birdcls/random.h"

namespace birdcls {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'B', 'C', 'D', 'N', 'N', 'H', 'D', '1'};
constexpr int kProbeResolution = 299;

void write_string(std::ostream& out, const std::string& s) {
  const std::uint64_t n = s.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(s.data(), static_cast<std::streamsize>(n));
}

std::string read_string(std::istream& in) {
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof(n)) || n > (1u << 20)) {
    throw Error("corrupt dnn backbone blob");
  }
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw Error("corrupt dnn backbone blob");
  return s;
}

}  // namespace

// cv::dnn::Net::forward mutates the network, so calls are serialized. The
// runtime is shared between clones since it is never trained.
struct DnnBackbone::Runtime {
  cv::dnn::Net net;
  std::mutex mutex;
};

DnnBackbone::DnnBackbone(BackboneKind kind, const fs::path& model_file, std::uint64_t seed,
                         std::string output_layer)
    : kind_(kind), model_file_(model_file), output_layer_(std::move(output_layer)) {
  if (kind == BackboneKind::kReferenceCnn) {
    throw Error("reference_cnn is not a dnn-runtime backbone");
  }
  if (!fs::exists(model_file)) {
    throw Error("pretrained model file not found: " + model_file.string());
  }
  runtime_ = std::make_shared<Runtime>();
  try {
    runtime_->net = cv::dnn::readNet(model_file.string());
  } catch (const cv::Exception& e) {
    throw Error("incompatible pretrained model file " + model_file.string() + ": " + e.what());
  }
  if (runtime_->net.empty()) {
    throw Error("incompatible pretrained model file " + model_file.string());
  }
  // Learn the feature width from one probe pass.
  const Image probe(kProbeResolution, kProbeResolution, 128);
  init_head(prepare(probe, kProbeResolution).size(), seed);
}

DnnBackbone::~DnnBackbone() = default;
DnnBackbone::DnnBackbone(const DnnBackbone& other) = default;

std::unique_ptr<Backbone> DnnBackbone::clone() const {
  return std::make_unique<DnnBackbone>(*this);
}

void DnnBackbone::init_head(std::size_t feature_width, std::uint64_t seed) {
  if (feature_width == 0) throw Error("pretrained model produced an empty feature vector");
  feature_width_ = feature_width;
  params_.assign(kNumSpecies * feature_width + kNumSpecies, 0.0f);
  grads_.assign(params_.size(), 0.0f);
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(feature_width + kNumSpecies));
  for (std::size_t i = 0; i < kNumSpecies * feature_width; ++i) {
    params_[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
}

std::vector<float> DnnBackbone::prepare(const Image& image, int resolution) const {
  const Image resized = resize(image, resolution, resolution);
  cv::Mat rgb(resolution, resolution, CV_8UC3, const_cast<std::uint8_t*>(resized.pixels().data()));
  const cv::Mat blob = cv::dnn::blobFromImage(rgb, 1.0 / 127.5, cv::Size(resolution, resolution),
                                              cv::Scalar(127.5, 127.5, 127.5), false, false);
  cv::Mat out;
  {
    std::lock_guard lock(runtime_->mutex);
    runtime_->net.setInput(blob);
    try {
      out = output_layer_.empty() ? runtime_->net.forward() : runtime_->net.forward(output_layer_);
    } catch (const cv::Exception& e) {
      throw Error(std::string("pretrained model forward failed: ") + e.what());
    }
  }
  cv::Mat flat = out.reshape(1, 1);
  std::vector<float> features(flat.begin<float>(), flat.end<float>());
  return features;
}

PredictionVector DnnBackbone::forward(std::span<const float> features, int) const {
  if (features.size() != feature_width_) throw Error("feature width mismatch");
  std::array<float, kNumSpecies> logits{};
  for (std::size_t k = 0; k < kNumSpecies; ++k) {
    double acc = params_[kNumSpecies * feature_width_ + k];
    const float* row = params_.data() + k * feature_width_;
    for (std::size_t i = 0; i < feature_width_; ++i) acc += row[i] * features[i];
    logits[k] = static_cast<float>(acc);
  }
  return softmax(logits);
}

double DnnBackbone::accumulate(std::span<const float> features, int resolution,
                               std::size_t label, PredictionVector& probs) {
  probs = forward(features, resolution);
  for (std::size_t k = 0; k < kNumSpecies; ++k) {
    const auto d = static_cast<float>(probs.probs[k] - (k == label));
    float* row = grads_.data() + k * feature_width_;
    for (std::size_t i = 0; i < feature_width_; ++i) row[i] += d * features[i];
    grads_[kNumSpecies * feature_width_ + k] += d;
  }
  return -std::log(std::max(probs.probs[label], 1e-300));
}

void DnnBackbone::save_weights(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_string(out, fs::absolute(model_file_).string());
  write_string(out, output_layer_);
  const std::uint64_t width = feature_width_;
  out.write(reinterpret_cast<const char*>(&width), sizeof(width));
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(float)));
}

namespace {

std::pair<std::string, std::string> read_blob_header(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a dnn backbone weight blob");
  }
  std::string model = read_string(in);
  std::string layer = read_string(in);
  return {std::move(model), std::move(layer)};
}

}  // namespace

std::unique_ptr<DnnBackbone> DnnBackbone::from_blob(BackboneKind kind, std::istream& in) {
  auto [model, layer] = read_blob_header(in);
  auto backbone = std::make_unique<DnnBackbone>(kind, model, 0, layer);
  std::uint64_t width = 0;
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  if (width != backbone->feature_width_) throw Error("dnn head width does not match the model");
  if (!in.read(reinterpret_cast<char*>(backbone->params_.data()),
               static_cast<std::streamsize>(backbone->params_.size() * sizeof(float)))) {
    throw Error("truncated dnn backbone blob");
  }
  return backbone;
}

void DnnBackbone::load_weights(std::istream& in) {
  output_layer_ = read_blob_header(in).second;
  std::uint64_t width = 0;
  in.read(reinterpret_cast<char*>(&width), sizeof(width));
  if (width != feature_width_) throw Error("dnn head width does not match the model");
  if (!in.read(reinterpret_cast<char*>(params_.data()),
               static_cast<std::streamsize>(params_.size() * sizeof(float)))) {
    throw Error("truncated dnn backbone blob");
  }
  std::fill(grads_.begin(), grads_.end(), 0.0f);
}

}  // namespace birdcls
