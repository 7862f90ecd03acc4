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

#include "birdcls/training.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "birdcls/dnn_backbone.h"
#include "birdcls/error.h"
#include "birdcls/io.h"
#include "birdcls/random.h"
#include "birdcls/reference_cnn.h"

namespace birdcls {

namespace fs = std::filesystem;

std::string_view to_string(StageKind stage) {
  return stage == StageKind::kOriginals ? "originals" : "crops";
}

std::string_view to_string(InitMode init) {
  switch (init) {
    case InitMode::kPretrained: return "pretrained";
    case InitMode::kPreviousStage: return "previous_stage";
    case InitMode::kFresh: return "fresh";
  }
  return "?";
}

StageKind parse_stage_kind(std::string_view text) {
  if (text == "originals" || text == "1") return StageKind::kOriginals;
  if (text == "crops" || text == "2") return StageKind::kCrops;
  throw Error("unknown stage '" + std::string(text) + "'");
}

InitMode parse_init_mode(std::string_view text) {
  if (text == "pretrained") return InitMode::kPretrained;
  if (text == "previous_stage") return InitMode::kPreviousStage;
  if (text == "fresh") return InitMode::kFresh;
  throw Error("unknown init mode '" + std::string(text) + "'");
}

StageConfig default_stage_config(StageKind stage) {
  StageConfig c;
  c.stage = stage;
  if (stage == StageKind::kCrops) {
    c.learning_rate = 1e-4;
    c.init = InitMode::kPreviousStage;
  }
  return c;
}

std::vector<std::string> check(const StageConfig& c) {
  std::vector<std::string> problems;
  if (c.input_resolution < 32) problems.push_back("input_resolution must be at least 32");
  if (c.epochs < 0) problems.push_back("epochs must be non-negative");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) {
    problems.push_back("learning_rate must be positive");
  }
  if (c.batch_size < 1) problems.push_back("batch_size must be positive");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    problems.push_back("Adam decay rates must lie in [0, 1)");
  }
  if (!(c.epsilon > 0.0)) problems.push_back("epsilon must be positive");
  return problems;
}

// --- BackboneHandle ---

BackboneHandle::BackboneHandle(std::unique_ptr<Backbone> backbone, std::uint64_t seed)
    : backbone_(std::move(backbone)), seed_(seed) {
  if (!backbone_) throw Error("null backbone");
}

BackboneHandle::BackboneHandle(const BackboneHandle& other)
    : backbone_(other.backbone_->clone()),
      seed_(other.seed_),
      history_(other.history_),
      stage_starts_(other.stage_starts_),
      resolution_(other.resolution_) {}

BackboneHandle& BackboneHandle::operator=(const BackboneHandle& other) {
  if (this != &other) {
    BackboneHandle copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void BackboneHandle::append_history(const HistoryEntry& entry) {
  if (!history_.empty() && entry.epoch <= history_.back().epoch) {
    throw Error("history epochs must increase");
  }
  history_.push_back(entry);
}

BackboneHandle build_backbone(BackboneKind kind, InitMode init,
                              const std::optional<fs::path>& pretrained_source,
                              std::uint64_t seed) {
  if (init == InitMode::kPreviousStage) {
    throw Error("previous_stage initialization needs an existing model");
  }
  if (init == InitMode::kPretrained) {
    if (!pretrained_source) {
      throw Error(std::string(to_string(kind)) + " pretrained init needs a model file");
    }
    if (!fs::exists(*pretrained_source)) {
      throw Error("pretrained model file not found: " + pretrained_source->string());
    }
  }
  if (kind == BackboneKind::kReferenceCnn) {
    if (init == InitMode::kFresh) {
      return BackboneHandle(std::make_unique<ReferenceCnn>(seed), seed);
    }
    BackboneHandle loaded = [&] {
      try {
        return load_checkpoint(*pretrained_source);
      } catch (const Error& e) {
        throw Error("incompatible pretrained file " + pretrained_source->string() + ": " +
                    e.what());
      }
    }();
    if (loaded.kind() != BackboneKind::kReferenceCnn) {
      throw Error("incompatible pretrained file " + pretrained_source->string() + ": holds " +
                  std::string(to_string(loaded.kind())));
    }
    return BackboneHandle(loaded.backbone().clone(), seed);
  }
  if (init == InitMode::kFresh) {
    throw Error(std::string(to_string(kind)) +
                " has no built-in architecture; initialize it from a pretrained model file");
  }
  return BackboneHandle(std::make_unique<DnnBackbone>(kind, *pretrained_source, seed), seed);
}

double categorical_cross_entropy(const PredictionVector& prediction, std::size_t target) {
  if (target >= kNumSpecies) throw Error("target class out of range");
  return -std::log(std::max(prediction.probs[target], std::numeric_limits<double>::min()));
}

// --- Adam ---

AdamOptimizer::AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2,
                             double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(size), v_(size) {}

void AdamOptimizer::step(std::span<float> values, std::span<const float> grads,
                         std::size_t batch_size) {
  if (values.size() != m_.size() || grads.size() != m_.size()) {
    throw Error("optimizer state does not match the parameter block");
  }
  ++step_;
  const double scale = 1.0 / static_cast<double>(batch_size);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i] * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    values[i] -= static_cast<float>(lr_ * m_hat / (std::sqrt(v_hat) + eps_));
  }
}

// --- Training ---

namespace {

// Prepared inputs for one manifest. Held in memory up to a budget; beyond
// it every access reloads and re-prepares the image.
class InputSet {
 public:
  static constexpr std::size_t kCacheBudgetBytes = std::size_t{1} << 30;

  InputSet(const Backbone& backbone, const Manifest& manifest, int resolution)
      : backbone_(backbone), manifest_(manifest), resolution_(resolution) {
    for (const auto& r : manifest.records()) {
      if (!r.label) throw Error("record '" + r.id + "' has no label");
      labels_.push_back(r.label->index());
    }
    if (manifest.empty()) return;
    auto first = load(0);
    const std::size_t bytes = first.size() * sizeof(float) * manifest.size();
    if (bytes <= kCacheBudgetBytes) {
      cache_.reserve(manifest.size());
      cache_.push_back(std::move(first));
      for (std::size_t i = 1; i < manifest.size(); ++i) cache_.push_back(load(i));
    }
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t label(std::size_t i) const { return labels_[i]; }

  std::vector<float> get(std::size_t i) const { return cache_.empty() ? load(i) : cache_[i]; }
  const std::vector<float>* cached(std::size_t i) const {
    return cache_.empty() ? nullptr : &cache_[i];
  }

 private:
  std::vector<float> load(std::size_t i) const {
    const auto& r = manifest_.records()[i];
    try {
      return backbone_.prepare(load_image(r.path), resolution_);
    } catch (const Error& e) {
      throw Error("cannot load image '" + r.id + "': " + e.what());
    }
  }

  const Backbone& backbone_;
  const Manifest& manifest_;
  int resolution_;
  std::vector<std::size_t> labels_;
  std::vector<std::vector<float>> cache_;
};

template <typename F>
void with_input(const InputSet& set, std::size_t i, F&& f) {
  if (const auto* cached = set.cached(i)) {
    f(std::span<const float>(*cached));
  } else {
    const auto input = set.get(i);
    f(std::span<const float>(input));
  }
}

double set_accuracy(const Backbone& backbone, const InputSet& set, int resolution) {
  if (set.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    with_input(set, i, [&](std::span<const float> input) {
      correct += backbone.forward(input, resolution).argmax() == set.label(i);
    });
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace

BackboneHandle run_stage(const BackboneHandle& model, const Manifest& train, const Manifest& val,
                         const StageConfig& config, std::uint64_t seed) {
  if (const auto problems = check(config); !problems.empty()) {
    throw Error("invalid stage config: " + problems.front());
  }
  BackboneHandle out = model;
  if (config.epochs == 0) return out;
  if (train.empty()) throw Error("training manifest is empty");

  Backbone& backbone = out.backbone();
  const int res = config.input_resolution;
  const InputSet train_set(backbone, train, res);
  const InputSet val_set(backbone, val, res);

  auto params = backbone.parameters();
  AdamOptimizer optimizer(params.values.size(), config.learning_rate, config.beta1, config.beta2,
                          config.epsilon);
  out.begin_stage();
  const int epoch_base = out.history().empty() ? 0 : out.history().back().epoch;
  std::vector<std::size_t> order(train_set.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int e = 1; e <= config.epochs; ++e) {
    const int epoch = epoch_base + e;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(config.stage), epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      backbone.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        with_input(train_set, i, [&](std::span<const float> input) {
          PredictionVector probs;
          loss_sum += backbone.accumulate(input, res, train_set.label(i), probs);
          correct += probs.argmax() == train_set.label(i);
        });
      }
      optimizer.step(params.values, params.grads, end - start);
    }
    const double loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(loss)) {
      throw Error("non-finite loss at epoch " + std::to_string(epoch) + " (stage " +
                  std::string(to_string(config.stage)) + ")");
    }
    HistoryEntry entry;
    entry.epoch = epoch;
    entry.stage = config.stage;
    entry.loss = loss;
    entry.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    entry.val_accuracy = set_accuracy(backbone, val_set, res);
    out.append_history(entry);
  }
  backbone.zero_grad();
  out.set_resolution(res);
  return out;
}

BackboneHandle multistage_train(BackboneKind kind, const MultistageInputs& data,
                                const StageConfig& stage1, const StageConfig& stage2,
                                std::uint64_t seed,
                                const std::optional<fs::path>& pretrained_source) {
  if (stage1.stage != StageKind::kOriginals) throw Error("stage 1 must train on originals");
  if (stage2.stage != StageKind::kCrops) throw Error("stage 2 must train on crops");
  if (stage2.init != InitMode::kPreviousStage) {
    throw Error("stage 2 must start from the stage-1 weights");
  }
  const BackboneHandle initial =
      build_backbone(kind, stage1.init, pretrained_source, derive_seed(seed, 0));
  const BackboneHandle first =
      run_stage(initial, data.originals_train, data.originals_val, stage1, seed);
  return run_stage(first, data.crops_train, data.crops_val, stage2, seed);
}

PredictionVector predict(const BackboneHandle& model, const Image& image, int resolution) {
  const Backbone& backbone = model.backbone();
  return backbone.forward(backbone.prepare(image, resolution), resolution);
}

double accuracy(const BackboneHandle& model, const Manifest& manifest, int resolution) {
  const InputSet set(model.backbone(), manifest, resolution);
  return set_accuracy(model.backbone(), set, resolution);
}

// --- Checkpoints ---

fs::path checkpoint_header_path(const fs::path& path) {
  fs::path p = path;
  p += ".header";
  return p;
}

void save_checkpoint(const fs::path& path, const BackboneHandle& model) {
  std::ostringstream blob;
  model.backbone().save_weights(blob);
  std::ostringstream header;
  const auto& history = model.history();
  header << "kind " << to_string(model.kind()) << '\n'
         << "num_classes " << BackboneHandle::num_classes() << '\n'
         << "stage " << (history.empty() ? "none" : to_string(history.back().stage)) << '\n'
         << "epoch " << (history.empty() ? 0 : history.back().epoch) << '\n'
         << "seed " << model.seed() << '\n'
         << "resolution " << model.resolution() << '\n';
  for (auto start : model.stage_starts()) header << "stage_start " << start << '\n';
  for (const auto& h : history) {
    header << "history " << h.epoch << ' ' << to_string(h.stage) << ' '
           << format_double(h.train_accuracy) << ' ' << format_double(h.val_accuracy) << ' '
           << format_double(h.loss) << '\n';
  }
  write_file_atomic(path, blob.str());
  write_file_atomic(checkpoint_header_path(path), header.str());
}

BackboneHandle load_checkpoint(const fs::path& path) {
  const fs::path header_path = checkpoint_header_path(path);
  if (!fs::exists(path)) throw Error("checkpoint not found: " + path.string());
  if (!fs::exists(header_path)) throw Error("checkpoint header not found: " + header_path.string());

  std::optional<BackboneKind> kind;
  std::uint64_t seed = 0;
  int resolution = 0;
  std::vector<std::size_t> starts;
  std::vector<HistoryEntry> history;
  std::istringstream header(read_file(header_path));
  std::string line;
  std::size_t row = 0;
  while (std::getline(header, line)) {
    ++row;
    const auto cols = split_whitespace(line);
    if (cols.empty()) continue;
    try {
      const auto key = cols[0];
      if (key == "kind" && cols.size() == 2) {
        kind = parse_backbone_kind(cols[1]);
      } else if (key == "num_classes" && cols.size() == 2) {
        if (parse_int(cols[1]) != static_cast<long long>(kNumSpecies)) {
          throw Error("checkpoint has " + std::string(cols[1]) + " classes, expected 16");
        }
      } else if (key == "seed" && cols.size() == 2) {
        seed = static_cast<std::uint64_t>(std::stoull(std::string(cols[1])));
      } else if (key == "resolution" && cols.size() == 2) {
        resolution = static_cast<int>(parse_int(cols[1]));
      } else if (key == "stage_start" && cols.size() == 2) {
        starts.push_back(static_cast<std::size_t>(parse_int(cols[1])));
      } else if (key == "history" && cols.size() == 6) {
        HistoryEntry h;
        h.epoch = static_cast<int>(parse_int(cols[1]));
        h.stage = parse_stage_kind(cols[2]);
        h.train_accuracy = parse_double(cols[3]);
        h.val_accuracy = parse_double(cols[4]);
        h.loss = parse_double(cols[5]);
        history.push_back(h);
      } else if (key != "stage" && key != "epoch") {
        throw Error("unrecognized header line");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(header_path.string(), row, e.what());
    }
  }
  if (!kind) throw Error("checkpoint header lacks a kind: " + header_path.string());

  std::ifstream blob(path, std::ios::binary);
  std::unique_ptr<Backbone> backbone;
  if (*kind == BackboneKind::kReferenceCnn) {
    auto cnn = std::make_unique<ReferenceCnn>(0);
    cnn->load_weights(blob);
    backbone = std::move(cnn);
  } else {
    backbone = DnnBackbone::from_blob(*kind, blob);
  }
  BackboneHandle handle(std::move(backbone), seed);
  std::size_t next_start = 0;
  for (std::size_t i = 0; i < history.size(); ++i) {
    while (next_start < starts.size() && starts[next_start] == i) {
      handle.begin_stage();
      ++next_start;
    }
    handle.append_history(history[i]);
  }
  handle.set_resolution(resolution);
  return handle;
}

}  // namespace birdcls
