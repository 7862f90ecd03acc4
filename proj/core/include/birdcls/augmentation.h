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
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "birdcls/dataset.h"
#include "birdcls/image.h"
#include "birdcls/species.h"

namespace birdcls {

enum class TechniqueKind {
  kGaussianNoise,
  kGaussianBlur,
  kFlip,
  kContrast,
  kHue,
  kAdd,
  kMultiply,
  kSharp,
  kAffine,
};

inline constexpr std::size_t kNumTechniques = 9;
inline constexpr std::array<TechniqueKind, kNumTechniques> kAllTechniques = {
    TechniqueKind::kGaussianNoise, TechniqueKind::kGaussianBlur, TechniqueKind::kFlip,
    TechniqueKind::kContrast,      TechniqueKind::kHue,          TechniqueKind::kAdd,
    TechniqueKind::kMultiply,      TechniqueKind::kSharp,        TechniqueKind::kAffine};

std::string_view to_string(TechniqueKind kind);
TechniqueKind parse_technique_kind(std::string_view name);

struct GaussianNoiseParams { double sigma = 10.0; };
struct GaussianBlurParams { double sigma = 1.0; };
struct FlipParams {};
// Scales each channel's distance from that channel's mean.
struct ContrastParams { double factor = 1.0; };
struct HueParams { double degrees = 0.0; };
struct AddParams { std::array<double, 3> value{}; };
struct MultiplyParams { std::array<double, 3> factor{1.0, 1.0, 1.0}; };
// Unsharp mask with a sigma-1 Gaussian.
struct SharpParams { double amount = 1.0; };
// Rotation and scale about the image centre, then translation given as a
// fraction of width/height.
struct AffineParams {
  double rotation_degrees = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;
  double translate_y = 0.0;
};

// Alternative order matches TechniqueKind.
using TechniqueParams =
    std::variant<GaussianNoiseParams, GaussianBlurParams, FlipParams, ContrastParams, HueParams,
                 AddParams, MultiplyParams, SharpParams, AffineParams>;

struct Technique {
  TechniqueParams params;

  TechniqueKind kind() const { return static_cast<TechniqueKind>(params.index()); }
  // "kind" followed by key=value parameters, stable across runs.
  std::string describe() const;
};

// Parameter ranges used for sampling and accepted by apply_technique.
namespace ranges {
inline constexpr double kNoiseSigma[2] = {5.0, 25.0};
inline constexpr double kBlurSigma[2] = {0.5, 2.0};
inline constexpr double kContrast[2] = {0.6, 1.4};
inline constexpr double kHueDegrees[2] = {-18.0, 18.0};
inline constexpr double kAdd[2] = {-40.0, 40.0};
inline constexpr double kMultiply[2] = {0.7, 1.3};
inline constexpr double kSharpAmount[2] = {0.5, 1.5};
inline constexpr double kRotationDegrees[2] = {-20.0, 20.0};
inline constexpr double kScale[2] = {0.85, 1.15};
inline constexpr double kTranslate[2] = {-0.08, 0.08};
}  // namespace ranges

// Throws birdcls::Error naming the parameter when out of range.
void validate(const Technique& technique);

Technique sample_technique(TechniqueKind kind, std::uint64_t seed);

// Pure. Output has the input's dimensions. `seed` only matters for
// gaussian_noise, whose per-channel-value deviations are sigma * Rng::normal()
// drawn in row-major (y, x, channel) order from Rng(seed).
Image apply_technique(const Image& image, const Technique& technique, std::uint64_t seed);

// Separable Gaussian kernel of size 2*ceil(3 sigma)+1, edge-replicated.
Image gaussian_blur(const Image& image, double sigma);

struct AugmentationPolicy {
  SpeciesLabel species;
  std::vector<TechniqueKind> enabled;
  std::size_t target_total = 0;
};

// The per-species technique table with per-class target totals.
const std::map<SpeciesLabel, AugmentationPolicy>& default_policy();

// One planned augmented image: which source, which technique, and the seed
// that fixes both its sampled parameters and any noise.
struct ExpansionStep {
  std::size_t ordinal = 0;
  std::size_t source = 0;
  TechniqueKind technique = TechniqueKind::kFlip;
  std::uint64_t seed = 0;
};

// Schedules target_total - num_sources augmentations. Step j uses source
// j mod n and technique (j mod n + j / n) mod T, so every (technique, source)
// pair is used once per n*T steps and usage stays balanced on both axes.
// Throws when target_total < num_sources or the policy enables nothing.
std::vector<ExpansionStep> plan_expansion(std::span<const std::string> source_ids,
                                          const AugmentationPolicy& policy, std::uint64_t seed);

// Returns the originals unchanged followed by the augmented records. Each
// augmented image is rendered from its source and written to
// out_dir/<id>.png. Records carry provenance kAugmented, the source id and
// the technique description.
std::vector<ImageRecord> expand_class(std::span<const ImageRecord> records,
                                      const AugmentationPolicy& policy, std::uint64_t seed,
                                      const std::filesystem::path& out_dir);

struct ClassCount {
  std::size_t originals = 0;
  std::size_t augmented = 0;
  std::size_t total() const { return originals + augmented; }
};

struct AugmentResult {
  Manifest manifest;
  PerSpecies<ClassCount> counts{};
};

// Expands every labeled train record of `manifest` according to `policy`.
// Records of other splits pass through unchanged. Classes absent from the
// policy or from the manifest are left alone. When `allow_overfull` is set a
// class already above its target is kept as-is instead of raising.
AugmentResult augment_manifest(const Manifest& manifest,
                               const std::map<SpeciesLabel, AugmentationPolicy>& policy,
                               std::uint64_t seed, const std::filesystem::path& out_dir,
                               bool allow_overfull = false);

std::string format_count_report(const PerSpecies<ClassCount>& counts);

}  // namespace birdcls
