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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "birdcls/backbone.h"
#include "birdcls/dataset.h"

namespace birdcls {

enum class StageKind { kOriginals, kCrops };
enum class InitMode { kPretrained, kPreviousStage, kFresh };

std::string_view to_string(StageKind stage);
std::string_view to_string(InitMode init);
StageKind parse_stage_kind(std::string_view text);
InitMode parse_init_mode(std::string_view text);

struct StageConfig {
  StageKind stage = StageKind::kOriginals;
  int input_resolution = 416;
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 16;
  InitMode init = InitMode::kPretrained;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Stage 1: originals, lr 1e-3, pretrained init. Stage 2: crops, lr 1e-4,
// initialized from stage 1.
StageConfig default_stage_config(StageKind stage);

// Empty when valid; otherwise one message per problem.
std::vector<std::string> check(const StageConfig& config);

struct HistoryEntry {
  int epoch = 0;  // 1-based, counted across stages
  StageKind stage = StageKind::kOriginals;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;  // NaN when the stage had no validation data
  double loss = 0.0;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

// Value type owning a backbone. Copies deep-clone the weights.
class BackboneHandle {
 public:
  BackboneHandle(std::unique_ptr<Backbone> backbone, std::uint64_t seed);
  BackboneHandle(const BackboneHandle& other);
  BackboneHandle& operator=(const BackboneHandle& other);
  BackboneHandle(BackboneHandle&&) noexcept = default;
  BackboneHandle& operator=(BackboneHandle&&) noexcept = default;

  BackboneKind kind() const { return backbone_->kind(); }
  static constexpr std::size_t num_classes() { return kNumSpecies; }
  std::uint64_t seed() const { return seed_; }

  const Backbone& backbone() const { return *backbone_; }
  Backbone& backbone() { return *backbone_; }

  const std::vector<HistoryEntry>& history() const { return history_; }
  // Index into history() at which each completed stage starts.
  const std::vector<std::size_t>& stage_starts() const { return stage_starts_; }
  // Resolution of the last completed stage, 0 if untrained.
  int resolution() const { return resolution_; }
  void set_resolution(int resolution) { resolution_ = resolution; }

  void begin_stage() { stage_starts_.push_back(history_.size()); }
  void append_history(const HistoryEntry& entry);

 private:
  std::unique_ptr<Backbone> backbone_;
  std::uint64_t seed_ = 0;
  std::vector<HistoryEntry> history_;
  std::vector<std::size_t> stage_starts_;
  int resolution_ = 0;
};

// reference_cnn: kFresh seeds new weights; kPretrained loads a reference_cnn
// checkpoint from `pretrained_source`. Inception kinds require kPretrained
// and a model file readable by the dnn runtime.
BackboneHandle build_backbone(BackboneKind kind, InitMode init,
                              const std::optional<std::filesystem::path>& pretrained_source,
                              std::uint64_t seed);

// -log(p[target]), with p clamped away from zero.
double categorical_cross_entropy(const PredictionVector& prediction, std::size_t target);

// Adam over a flat parameter block.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);
  // `grads` are sums over a batch of `batch_size` samples.
  void step(std::span<float> values, std::span<const float> grads, std::size_t batch_size);
  std::size_t steps() const { return step_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  std::vector<double> m_, v_;
};

// Trains a copy of `model` for config.epochs epochs of categorical
// cross-entropy under Adam. Batches are drawn from a shuffle seeded by
// (seed, epoch). Appends one history entry per epoch. Throws with the record
// id on image load failures and with the epoch on a non-finite loss.
BackboneHandle run_stage(const BackboneHandle& model, const Manifest& train, const Manifest& val,
                         const StageConfig& config, std::uint64_t seed);

struct MultistageInputs {
  Manifest originals_train;
  Manifest originals_val;
  Manifest crops_train;
  Manifest crops_val;
};

// Stage 1 on originals, then stage 2 on crops starting from stage-1 weights.
// Stage 1 is initialized per stage1.init.
BackboneHandle multistage_train(BackboneKind kind, const MultistageInputs& data,
                                const StageConfig& stage1, const StageConfig& stage2,
                                std::uint64_t seed,
                                const std::optional<std::filesystem::path>& pretrained_source = {});

PredictionVector predict(const BackboneHandle& model, const Image& image, int resolution);

// Fraction of records whose argmax prediction equals the label. NaN when empty.
double accuracy(const BackboneHandle& model, const Manifest& manifest, int resolution);

// Checkpoint = weight blob at `path` plus a sidecar text header at
// `path` + ".header" (kind, num_classes, stage, epoch, seed, resolution,
// history rows). Both are written atomically.
void save_checkpoint(const std::filesystem::path& path, const BackboneHandle& model);
BackboneHandle load_checkpoint(const std::filesystem::path& path);
std::filesystem::path checkpoint_header_path(const std::filesystem::path& path);

}  // namespace birdcls
