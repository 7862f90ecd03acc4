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
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "birdcls/image.h"
#include "birdcls/species.h"

namespace birdcls {

enum class BackboneKind { kInceptionV3, kInceptionResnetV2, kReferenceCnn };

std::string_view to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view name);

// Normalized class-probability vector.
struct PredictionVector {
  std::array<double, kNumSpecies> probs{};

  // Lowest index among maximal entries.
  std::size_t argmax() const;
  double max() const { return probs[argmax()]; }

  friend bool operator==(const PredictionVector&, const PredictionVector&) = default;
};

// Normalized exponential, computed in double with max subtraction.
PredictionVector softmax(std::span<const float> logits);

double swish(double x);
double swish_derivative(double x);

// Parameters and their gradient accumulators, viewed as one flat block so
// the optimizer does not need to know the architecture.
struct ParameterView {
  std::span<float> values;
  std::span<float> grads;
};

// A classifier body with a kNumSpecies-way softmax head.
//
// prepare() turns an image into the model's input representation at a given
// square resolution; trainers cache its result. forward() is const and safe
// to call concurrently; accumulate() adds one sample's cross-entropy gradient
// into the gradient buffer.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual BackboneKind kind() const = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;

  virtual std::vector<float> prepare(const Image& image, int resolution) const = 0;
  virtual PredictionVector forward(std::span<const float> input, int resolution) const = 0;
  // Returns the sample loss; fills `probs` with the forward output.
  virtual double accumulate(std::span<const float> input, int resolution, std::size_t label,
                            PredictionVector& probs) = 0;

  virtual ParameterView parameters() = 0;
  void zero_grad();

  // Opaque weight blob. The matching loader is selected by kind().
  virtual void save_weights(std::ostream& out) const = 0;
  virtual void load_weights(std::istream& in) = 0;
};

}  // namespace birdcls
