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

#include "birdcls/augmentation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "birdcls/error.h"
#include "birdcls/random.h"

namespace birdcls {

namespace fs = std::filesystem;

std::string_view to_string(TechniqueKind kind) {
  switch (kind) {
    case TechniqueKind::kGaussianNoise: return "gaussian_noise";
    case TechniqueKind::kGaussianBlur: return "gaussian_blur";
    case TechniqueKind::kFlip: return "flip";
    case TechniqueKind::kContrast: return "contrast";
    case TechniqueKind::kHue: return "hue";
    case TechniqueKind::kAdd: return "add";
    case TechniqueKind::kMultiply: return "multiply";
    case TechniqueKind::kSharp: return "sharp";
    case TechniqueKind::kAffine: return "affine";
  }
  return "?";
}

TechniqueKind parse_technique_kind(std::string_view name) {
  for (auto kind : kAllTechniques) {
    if (to_string(kind) == name) return kind;
  }
  throw Error("unknown augmentation technique '" + std::string(name) + "'");
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string triple(const std::array<double, 3>& v) {
  return num(v[0]) + "/" + num(v[1]) + "/" + num(v[2]);
}

void require_range(double value, const double (&range)[2], const char* what) {
  if (!(value >= range[0] && value <= range[1])) {
    throw Error(std::string(what) + " = " + num(value) + " outside [" + num(range[0]) + ", " +
                num(range[1]) + "]");
  }
}

}  // namespace

std::string Technique::describe() const {
  std::string out(to_string(kind()));
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GaussianNoiseParams> ||
                      std::is_same_v<P, GaussianBlurParams>) {
          out += "(sigma=" + num(p.sigma) + ")";
        } else if constexpr (std::is_same_v<P, ContrastParams>) {
          out += "(factor=" + num(p.factor) + ")";
        } else if constexpr (std::is_same_v<P, HueParams>) {
          out += "(degrees=" + num(p.degrees) + ")";
        } else if constexpr (std::is_same_v<P, AddParams>) {
          out += "(value=" + triple(p.value) + ")";
        } else if constexpr (std::is_same_v<P, MultiplyParams>) {
          out += "(factor=" + triple(p.factor) + ")";
        } else if constexpr (std::is_same_v<P, SharpParams>) {
          out += "(amount=" + num(p.amount) + ")";
        } else if constexpr (std::is_same_v<P, AffineParams>) {
          out += "(rotation=" + num(p.rotation_degrees) + ";scale=" + num(p.scale) +
                 ";tx=" + num(p.translate_x) + ";ty=" + num(p.translate_y) + ")";
        }
      },
      params);
  return out;
}

void validate(const Technique& technique) {
  std::visit(
      [](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GaussianNoiseParams>) {
          require_range(p.sigma, ranges::kNoiseSigma, "gaussian_noise sigma");
        } else if constexpr (std::is_same_v<P, GaussianBlurParams>) {
          require_range(p.sigma, ranges::kBlurSigma, "gaussian_blur sigma");
        } else if constexpr (std::is_same_v<P, ContrastParams>) {
          require_range(p.factor, ranges::kContrast, "contrast factor");
        } else if constexpr (std::is_same_v<P, HueParams>) {
          require_range(p.degrees, ranges::kHueDegrees, "hue degrees");
        } else if constexpr (std::is_same_v<P, AddParams>) {
          for (double v : p.value) require_range(v, ranges::kAdd, "add value");
        } else if constexpr (std::is_same_v<P, MultiplyParams>) {
          for (double v : p.factor) require_range(v, ranges::kMultiply, "multiply factor");
        } else if constexpr (std::is_same_v<P, SharpParams>) {
          require_range(p.amount, ranges::kSharpAmount, "sharp amount");
        } else if constexpr (std::is_same_v<P, AffineParams>) {
          require_range(p.rotation_degrees, ranges::kRotationDegrees, "affine rotation");
          require_range(p.scale, ranges::kScale, "affine scale");
          require_range(p.translate_x, ranges::kTranslate, "affine translate_x");
          require_range(p.translate_y, ranges::kTranslate, "affine translate_y");
        }
      },
      technique.params);
}

Technique sample_technique(TechniqueKind kind, std::uint64_t seed) {
  Rng rng(seed);
  auto draw = [&](const double (&r)[2]) { return rng.uniform(r[0], r[1]); };
  switch (kind) {
    case TechniqueKind::kGaussianNoise: return {GaussianNoiseParams{draw(ranges::kNoiseSigma)}};
    case TechniqueKind::kGaussianBlur: return {GaussianBlurParams{draw(ranges::kBlurSigma)}};
    case TechniqueKind::kFlip: return {FlipParams{}};
    case TechniqueKind::kContrast: return {ContrastParams{draw(ranges::kContrast)}};
    case TechniqueKind::kHue: return {HueParams{draw(ranges::kHueDegrees)}};
    case TechniqueKind::kAdd: {
      AddParams p;
      for (double& v : p.value) v = draw(ranges::kAdd);
      return {p};
    }
    case TechniqueKind::kMultiply: {
      MultiplyParams p;
      for (double& v : p.factor) v = draw(ranges::kMultiply);
      return {p};
    }
    case TechniqueKind::kSharp: return {SharpParams{draw(ranges::kSharpAmount)}};
    case TechniqueKind::kAffine: {
      AffineParams p;
      p.rotation_degrees = draw(ranges::kRotationDegrees);
      p.scale = draw(ranges::kScale);
      p.translate_x = draw(ranges::kTranslate);
      p.translate_y = draw(ranges::kTranslate);
      return {p};
    }
  }
  throw Error("unknown augmentation technique");
}

namespace {

template <typename F>
Image map_values(const Image& image, F&& f) {
  Image out = image;
  auto src = image.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = clamp_to_byte(f(src[i], i));
  return out;
}

// Unrounded separable Gaussian, edge replicated, channel-interleaved.
std::vector<double> blur_values(const Image& image, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = image.width();
  const int h = image.height();
  std::vector<double> tmp(image.size());
  std::vector<double> out(image.size());
  auto idx = [w](int x, int y, int c) { return (static_cast<std::size_t>(y) * w + x) * 3 + c; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * image.at(std::clamp(x + k, 0, w - 1), y, c);
        }
        tmp[idx(x, y, c)] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp[idx(x, std::clamp(y + k, 0, h - 1), c)];
        }
        out[idx(x, y, c)] = acc;
      }
    }
  }
  return out;
}

Image apply_noise(const Image& image, const GaussianNoiseParams& p, std::uint64_t seed) {
  Rng rng(seed);
  Image out = image;
  auto dst = out.pixels();
  auto src = image.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = clamp_to_byte(src[i] + p.sigma * rng.normal());
  }
  return out;
}

Image apply_flip(const Image& image) {
  Image out = image;
  const int w = image.width();
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(w - 1 - x, y, c);
    }
  }
  return out;
}

Image apply_contrast(const Image& image, const ContrastParams& p) {
  std::array<double, 3> mean{};
  auto src = image.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) mean[i % 3] += src[i];
  const double n = static_cast<double>(image.width()) * image.height();
  for (double& m : mean) m /= n;
  return map_values(image,
                    [&](double v, std::size_t i) { return mean[i % 3] + p.factor * (v - mean[i % 3]); });
}

// RGB in [0, 255] <-> HSV with hue in degrees.
struct Hsv {
  double h, s, v;
};

Hsv to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0.0;
  if (d > 0.0) {
    if (mx == r) {
      h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / d + 2.0);
    } else {
      h = 60.0 * ((r - g) / d + 4.0);
    }
  }
  if (h < 0.0) h += 360.0;
  return {h, mx > 0.0 ? d / mx : 0.0, mx};
}

std::array<double, 3> from_hsv(const Hsv& hsv) {
  const double c = hsv.v * hsv.s;
  const double hp = hsv.h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = hsv.v - c;
  return {r + m, g + m, b + m};
}

Image apply_hue(const Image& image, const HueParams& p) {
  Image out = image;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      Hsv hsv = to_hsv(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
      hsv.h = std::fmod(hsv.h + p.degrees, 360.0);
      if (hsv.h < 0.0) hsv.h += 360.0;
      const auto rgb = from_hsv(hsv);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp_to_byte(rgb[c]);
    }
  }
  return out;
}

Image apply_sharp(const Image& image, const SharpParams& p) {
  const auto blurred = blur_values(image, 1.0);
  return map_values(image,
                    [&](double v, std::size_t i) { return v + p.amount * (v - blurred[i]); });
}

Image apply_affine(const Image& image, const AffineParams& p) {
  const int w = image.width();
  const int h = image.height();
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double theta = p.rotation_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double tx = p.translate_x * w;
  const double ty = p.translate_y * h;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse of: dst = centre + scale * R(theta) * (src - centre) + t.
      const double dx = (x - cx - tx) / p.scale;
      const double dy = (y - cy - ty) / p.scale;
      const double sx = std::clamp(cx + cos_t * dx + sin_t * dy, 0.0, w - 1.0);
      const double sy = std::clamp(cy - sin_t * dx + cos_t * dy, 0.0, h - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - fx) + image.at(x1, y0, c) * fx;
        const double bottom = image.at(x0, y1, c) * (1.0 - fx) + image.at(x1, y1, c) * fx;
        out.at(x, y, c) = clamp_to_byte(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw Error("gaussian_blur sigma must be positive");
  const auto values = blur_values(image, sigma);
  Image out = image;
  auto dst = out.pixels();
  for (std::size_t i = 0; i < values.size(); ++i) dst[i] = clamp_to_byte(values[i]);
  return out;
}

Image apply_technique(const Image& image, const Technique& technique, std::uint64_t seed) {
  if (image.empty()) throw Error("apply_technique on an empty image");
  validate(technique);
  return std::visit(
      [&](const auto& p) -> Image {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GaussianNoiseParams>) {
          return apply_noise(image, p, seed);
        } else if constexpr (std::is_same_v<P, GaussianBlurParams>) {
          return gaussian_blur(image, p.sigma);
        } else if constexpr (std::is_same_v<P, FlipParams>) {
          return apply_flip(image);
        } else if constexpr (std::is_same_v<P, ContrastParams>) {
          return apply_contrast(image, p);
        } else if constexpr (std::is_same_v<P, HueParams>) {
          return apply_hue(image, p);
        } else if constexpr (std::is_same_v<P, AddParams>) {
          return map_values(image, [&](double v, std::size_t i) { return v + p.value[i % 3]; });
        } else if constexpr (std::is_same_v<P, MultiplyParams>) {
          return map_values(image, [&](double v, std::size_t i) { return v * p.factor[i % 3]; });
        } else if constexpr (std::is_same_v<P, SharpParams>) {
          return apply_sharp(image, p);
        } else {
          return apply_affine(image, p);
        }
      },
      technique.params);
}

const std::map<SpeciesLabel, AugmentationPolicy>& default_policy() {
  using K = TechniqueKind;
  static const std::map<SpeciesLabel, AugmentationPolicy> table = [] {
    const std::vector<K> base = {K::kGaussianNoise, K::kGaussianBlur, K::kFlip, K::kContrast,
                                 K::kHue};
    std::vector<K> seven = base;
    seven.insert(seven.end(), {K::kAdd, K::kMultiply});
    const std::vector<K> all(kAllTechniques.begin(), kAllTechniques.end());
    struct Row {
      std::string_view code;
      const std::vector<K>* enabled;
      std::size_t total;
    };
    const Row rows[] = {
        {"blasti", &base, 90},  {"bonegl", &all, 78},   {"brhkyt", &all, 65},
        {"cbrtsh", &all, 91},   {"cmnmyn", &all, 91},   {"gretit", &all, 78},
        {"hilpig", &seven, 80}, {"himbul", &base, 99},  {"himgri", &base, 100},
        {"hsparo", &base, 81},  {"indvul", &base, 81},  {"jglowl", &all, 78},
        {"lbicrw", &all, 78},   {"mgprob", &all, 78},   {"rebimg", &seven, 80},
        {"wcrsrt", &seven, 80},
    };
    std::map<SpeciesLabel, AugmentationPolicy> out;
    for (const auto& row : rows) {
      const auto label = SpeciesLabel::parse(row.code);
      out.emplace(label, AugmentationPolicy{label, *row.enabled, row.total});
    }
    return out;
  }();
  return table;
}

std::vector<ExpansionStep> plan_expansion(std::span<const std::string> source_ids,
                                          const AugmentationPolicy& policy, std::uint64_t seed) {
  const std::size_t n = source_ids.size();
  if (n == 0) throw Error("expand_class needs at least one source record");
  if (policy.target_total < n) {
    throw Error("target_total " + std::to_string(policy.target_total) + " for " +
                std::string(policy.species.code()) + " is below its " + std::to_string(n) +
                " originals");
  }
  if (policy.enabled.empty() && policy.target_total > n) {
    throw Error("policy for " + std::string(policy.species.code()) + " enables no technique");
  }
  const std::size_t t = policy.enabled.size();
  std::vector<ExpansionStep> steps;
  steps.reserve(policy.target_total - n);
  for (std::size_t j = 0; j < policy.target_total - n; ++j) {
    ExpansionStep step;
    step.ordinal = j;
    step.source = j % n;
    step.technique = policy.enabled[(j % n + j / n) % t];
    step.seed = derive_seed(seed, stable_hash(source_ids[step.source]),
                            static_cast<std::uint64_t>(step.technique), j);
    steps.push_back(step);
  }
  return steps;
}

std::vector<ImageRecord> expand_class(std::span<const ImageRecord> records,
                                      const AugmentationPolicy& policy, std::uint64_t seed,
                                      const fs::path& out_dir) {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (!r.label || *r.label != policy.species) {
      throw Error("record '" + r.id + "' does not belong to class " +
                  std::string(policy.species.code()));
    }
    ids.push_back(r.id);
  }
  const auto steps = plan_expansion(ids, policy, seed);

  std::vector<ImageRecord> out(records.begin(), records.end());
  std::vector<std::optional<Image>> sources(records.size());
  for (const auto& step : steps) {
    const ImageRecord& src = records[step.source];
    if (!sources[step.source]) {
      try {
        sources[step.source] = load_image(src.path);
      } catch (const Error& e) {
        throw Error("cannot load '" + src.id + "': " + e.what());
      }
    }
    const Technique technique = sample_technique(step.technique, derive_seed(step.seed, 1));
    const Image image = apply_technique(*sources[step.source], technique, derive_seed(step.seed, 2));
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "__aug%04zu", step.ordinal);
    ImageRecord r;
    r.id = src.id + suffix;
    r.path = out_dir / (r.id + ".png");
    r.label = src.label;
    r.width = image.width();
    r.height = image.height();
    r.split = src.split;
    r.provenance = Provenance::kAugmented;
    r.source = src.id;
    r.derivation = technique.describe();
    save_image(r.path, image);
    out.push_back(std::move(r));
  }
  return out;
}

AugmentResult augment_manifest(const Manifest& manifest,
                               const std::map<SpeciesLabel, AugmentationPolicy>& policy,
                               std::uint64_t seed, const fs::path& out_dir, bool allow_overfull) {
  PerSpecies<std::vector<ImageRecord>> by_class;
  for (const auto& r : manifest.records()) {
    if (r.label && r.split == Split::kTrain) by_class[r.label->index()].push_back(r);
  }
  AugmentResult result;
  std::vector<ImageRecord> records = manifest.records();
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    const auto& members = by_class[c];
    result.counts[c].originals = members.size();
    const auto it = policy.find(SpeciesLabel(c));
    if (members.empty() || it == policy.end()) continue;
    AugmentationPolicy p = it->second;
    if (allow_overfull) p.target_total = std::max(p.target_total, members.size());
    auto expanded = expand_class(members, p, seed, out_dir);
    result.counts[c].augmented = expanded.size() - members.size();
    records.insert(records.end(), std::make_move_iterator(expanded.begin() + members.size()),
                   std::make_move_iterator(expanded.end()));
  }
  result.manifest = Manifest(std::move(records));
  return result;
}

std::string format_count_report(const PerSpecies<ClassCount>& counts) {
  std::ostringstream out;
  char line[96];
  std::snprintf(line, sizeof(line), "%-8s %10s %10s %8s\n", "species", "originals", "augmented",
                "total");
  out << line;
  ClassCount sum;
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    std::snprintf(line, sizeof(line), "%-8s %10zu %10zu %8zu\n",
                  std::string(kSpeciesCodes[c]).c_str(), counts[c].originals, counts[c].augmented,
                  counts[c].total());
    out << line;
    sum.originals += counts[c].originals;
    sum.augmented += counts[c].augmented;
  }
  std::snprintf(line, sizeof(line), "%-8s %10zu %10zu %8zu\n", "all", sum.originals,
                sum.augmented, sum.total());
  out << line;
  return out.str();
}

}  // namespace birdcls
