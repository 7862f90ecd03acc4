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

#include "birdcls/backbone.h"

#include <algorithm>
#include <cmath>

#include "birdcls/error.h"

namespace birdcls {

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kInceptionV3: return "inception_v3";
    case BackboneKind::kInceptionResnetV2: return "inception_resnet_v2";
    case BackboneKind::kReferenceCnn: return "reference_cnn";
  }
  return "?";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "inception_v3") return BackboneKind::kInceptionV3;
  if (name == "inception_resnet_v2") return BackboneKind::kInceptionResnetV2;
  if (name == "reference_cnn") return BackboneKind::kReferenceCnn;
  throw Error("unknown backbone kind '" + std::string(name) + "'");
}

std::size_t PredictionVector::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

PredictionVector softmax(std::span<const float> logits) {
  if (logits.size() != kNumSpecies) throw Error("softmax expects one logit per species");
  const double mx = *std::max_element(logits.begin(), logits.end());
  PredictionVector out;
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumSpecies; ++i) {
    out.probs[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += out.probs[i];
  }
  for (double& p : out.probs) p /= sum;
  return out;
}

double swish(double x) { return x / (1.0 + std::exp(-x)); }

double swish_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s + x * s * (1.0 - s);
}

void Backbone::zero_grad() {
  auto view = parameters();
  std::fill(view.grads.begin(), view.grads.end(), 0.0f);
}

}  // namespace birdcls
