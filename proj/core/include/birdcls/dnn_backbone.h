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
#include <memory>
#include <string>

#include "birdcls/backbone.h"

namespace birdcls {

// Pretrained network loaded through OpenCV's dnn runtime and used as a frozen
// feature extractor, with a trainable kNumSpecies-way dense head in place of
// the original classifier. prepare() runs the network, so the cached input
// of a trainer is the feature vector and training touches only the head.
//
// The model file must produce a flat feature vector from `output_layer`
// (empty: the network's default output). Inputs are scaled to [-1, 1].
class DnnBackbone : public Backbone {
 public:
  DnnBackbone(BackboneKind kind, const std::filesystem::path& model_file, std::uint64_t seed,
              std::string output_layer = {});
  ~DnnBackbone() override;
  DnnBackbone(const DnnBackbone& other);

  BackboneKind kind() const override { return kind_; }
  std::unique_ptr<Backbone> clone() const override;

  std::vector<float> prepare(const Image& image, int resolution) const override;
  PredictionVector forward(std::span<const float> features, int resolution) const override;
  double accumulate(std::span<const float> features, int resolution, std::size_t label,
                    PredictionVector& probs) override;

  ParameterView parameters() override { return {params_, grads_}; }

  // Blob: model path, output layer, feature width, head weights.
  void save_weights(std::ostream& out) const override;
  void load_weights(std::istream& in) override;
  // Reconstructs a backbone from a blob written by save_weights, reloading
  // the model file it references.
  static std::unique_ptr<DnnBackbone> from_blob(BackboneKind kind, std::istream& in);

  const std::filesystem::path& model_file() const { return model_file_; }

 private:
  struct Runtime;

  void init_head(std::size_t feature_width, std::uint64_t seed);

  BackboneKind kind_;
  std::filesystem::path model_file_;
  std::string output_layer_;
  std::shared_ptr<Runtime> runtime_;
  std::size_t feature_width_ = 0;
  std::vector<float> params_;
  std::vector<float> grads_;
};

}  // namespace birdcls
