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

#include <array>
#include <cstdint>
#include <vector>

#include "birdcls/backbone.h"

namespace birdcls {

// Four blocks of (3x3 same convolution -> swish -> 2x2 max-pool) with 16, 32,
// 64 and 64 channels, global average pooling and a fully connected head.
// Convolutions run as im2col + GEMM. Minimum resolution is 32 (16 would
// leave a 1x1 map after the fourth pool, which is allowed but pointless).
class ReferenceCnn : public Backbone {
 public:
  static constexpr std::array<int, 5> kChannels = {3, 16, 32, 64, 64};
  static constexpr int kMinResolution = 32;

  // He-uniform convolution weights, Glorot-uniform head, zero biases.
  explicit ReferenceCnn(std::uint64_t seed);

  BackboneKind kind() const override { return BackboneKind::kReferenceCnn; }
  std::unique_ptr<Backbone> clone() const override;

  // Resize to resolution^2, channel-planar, (v - 127.5) / 64.
  std::vector<float> prepare(const Image& image, int resolution) const override;
  PredictionVector forward(std::span<const float> input, int resolution) const override;
  double accumulate(std::span<const float> input, int resolution, std::size_t label,
                    PredictionVector& probs) override;

  ParameterView parameters() override { return {params_, grads_}; }
  std::span<const float> parameter_values() const { return params_; }
  std::span<const float> gradient_values() const { return grads_; }

  void save_weights(std::ostream& out) const override;
  void load_weights(std::istream& in) override;

  static std::size_t parameter_count();

 private:
  struct Trace;
  void run_forward(std::span<const float> input, int resolution, Trace& trace) const;

  std::vector<float> params_;
  std::vector<float> grads_;
};

}  // namespace birdcls
