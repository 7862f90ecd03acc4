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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "birdcls/error.h"
#include "birdcls/io.h"
#include "birdcls/reference_cnn.h"
#include "birdcls/synth.h"
#include "test_support.h"

namespace birdcls {
namespace {

constexpr int kRes = 32;

StageConfig quick_stage(StageKind stage, int epochs, double lr = 3e-3) {
  StageConfig c = default_stage_config(stage);
  c.input_resolution = kRes;
  c.epochs = epochs;
  c.learning_rate = lr;
  c.batch_size = 8;
  return c;
}

// Two classes of soft blobs at random positions: warm blobs are class 0,
// cool blobs class 1, both with pixel noise.
Image blob_image(bool warm, Rng& rng) {
  const int size = 32;
  Image image(size, size);
  const double cx = rng.uniform(8, 24), cy = rng.uniform(8, 24), r = rng.uniform(5, 9);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double a = std::clamp(1.5 - d / r, 0.0, 1.0);
      const double base = 100 + 20 * rng.normal();
      image.at(x, y, 0) = clamp_to_byte(base * (1 - a) + a * (warm ? 220 : 40));
      image.at(x, y, 1) = clamp_to_byte(base * (1 - a) + a * 90);
      image.at(x, y, 2) = clamp_to_byte(base * (1 - a) + a * (warm ? 40 : 220));
    }
  }
  return image;
}

Manifest write_blobs(const testing::TempDir& dir, int per_class, std::uint64_t seed,
                     Split split = Split::kTrain) {
  Rng rng(seed);
  std::vector<ImageRecord> records;
  for (int i = 0; i < 2 * per_class; ++i) {
    const bool warm = i % 2 == 0;
    ImageRecord r;
    r.id = std::string(to_string(split)) + std::to_string(i);
    r.path = dir / ("blobs/" + r.id + ".png");
    r.label = SpeciesLabel(warm ? 0 : 1);
    r.width = r.height = 32;
    r.split = split;
    save_image(r.path, blob_image(warm, rng));
    records.push_back(r);
  }
  return Manifest(records);
}

// Mean red-minus-blue of each image. The blob data set counts as separable
// when a single threshold on this feature splits the two classes.
bool separable_by_colour(const Manifest& m) {
  double warm_min = 1e9, cool_max = -1e9;
  for (const auto& r : m.records()) {
    const Image image = load_image(r.path);
    double rb = 0.0;
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) rb += image.at(x, y, 0) - image.at(x, y, 2);
    }
    rb /= image.width() * image.height();
    if (r.label->index() == 0) {
      warm_min = std::min(warm_min, rb);
    } else {
      cool_max = std::max(cool_max, rb);
    }
  }
  return warm_min > cool_max;
}

TEST(StageConfigTest, Defaults) {
  const auto s1 = default_stage_config(StageKind::kOriginals);
  const auto s2 = default_stage_config(StageKind::kCrops);
  EXPECT_EQ(s1.input_resolution, 416);
  EXPECT_DOUBLE_EQ(s1.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(s2.learning_rate, 1e-4);
  EXPECT_EQ(s1.init, InitMode::kPretrained);
  EXPECT_EQ(s2.init, InitMode::kPreviousStage);
  EXPECT_DOUBLE_EQ(s1.beta1, 0.9);
  EXPECT_DOUBLE_EQ(s1.beta2, 0.999);
  EXPECT_DOUBLE_EQ(s1.epsilon, 1e-8);
  EXPECT_TRUE(check(s1).empty());
}

TEST(StageConfigTest, CheckReportsEachProblem) {
  StageConfig c;
  c.input_resolution = 16;
  c.batch_size = 0;
  c.learning_rate = -1;
  EXPECT_EQ(check(c).size(), 3u);
}

TEST(LossTest, CategoricalCrossEntropy) {
  PredictionVector p;
  p.probs[3] = 1.0;
  EXPECT_EQ(categorical_cross_entropy(p, 3), 0.0);
  PredictionVector q;
  q.probs.fill(1.0 / 16);
  EXPECT_NEAR(categorical_cross_entropy(q, 0), std::log(16.0), 1e-12);
  EXPECT_TRUE(std::isfinite(categorical_cross_entropy(p, 4)));
  EXPECT_THROW(categorical_cross_entropy(p, 16), Error);
}

TEST(AdamTest, FirstStepMovesByLearningRateAgainstGradient) {
  AdamOptimizer adam(3, 0.1);
  std::vector<float> values = {1.0f, 1.0f, 1.0f};
  const std::vector<float> grads = {4.0f, -2.0f, 0.0f};
  adam.step(values, grads, 2);
  EXPECT_NEAR(values[0], 0.9, 1e-6);
  EXPECT_NEAR(values[1], 1.1, 1e-6);
  EXPECT_EQ(values[2], 1.0f);
  EXPECT_EQ(adam.steps(), 1u);
  EXPECT_THROW(adam.step(values, std::vector<float>(2), 1), Error);
}

TEST(AdamTest, MinimizesAQuadratic) {
  AdamOptimizer adam(1, 0.05);
  std::vector<float> x = {5.0f};
  for (int i = 0; i < 2000; ++i) {
    const std::vector<float> g = {2.0f * (x[0] - 1.5f)};
    adam.step(x, g, 1);
  }
  EXPECT_NEAR(x[0], 1.5, 1e-2);
}

TEST(BuildBackboneTest, FreshReferenceIsDeterministic) {
  const auto a = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 3);
  const auto b = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 3);
  const Image image = testing::random_image(60, 60, 1);
  EXPECT_EQ(predict(a, image, 416), predict(b, image, 416));
  EXPECT_EQ(BackboneHandle::num_classes(), 16u);
}

TEST(BuildBackboneTest, InitErrors) {
  EXPECT_THROW(build_backbone(BackboneKind::kInceptionV3, InitMode::kPretrained,
                              std::filesystem::path("/nonexistent/iv3.pb"), 1),
               Error);
  EXPECT_THROW(build_backbone(BackboneKind::kInceptionV3, InitMode::kPretrained, std::nullopt, 1),
               Error);
  EXPECT_THROW(build_backbone(BackboneKind::kInceptionResnetV2, InitMode::kFresh, std::nullopt, 1),
               Error);
  EXPECT_THROW(
      build_backbone(BackboneKind::kReferenceCnn, InitMode::kPreviousStage, std::nullopt, 1),
      Error);
}

TEST(BuildBackboneTest, PretrainedReferenceLoadsCheckpointWeights) {
  testing::TempDir dir;
  const auto source = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 4);
  save_checkpoint(dir / "ref.ckpt", source);
  const auto loaded =
      build_backbone(BackboneKind::kReferenceCnn, InitMode::kPretrained, dir / "ref.ckpt", 99);
  const Image image = testing::random_image(40, 40, 2);
  EXPECT_EQ(predict(loaded, image, 32), predict(source, image, 32));
  EXPECT_EQ(loaded.seed(), 99u);
  write_file_atomic(dir / "junk.ckpt", "junk");
  EXPECT_THROW(
      build_backbone(BackboneKind::kReferenceCnn, InitMode::kPretrained, dir / "junk.ckpt", 1),
      Error);
}

TEST(PredictTest, NormalizedAndDeterministic) {
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 1);
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const Image image = testing::random_image(20 + i * 13, 50, rng.below(100));
    const auto p = predict(model, image, 64);
    EXPECT_NEAR(std::accumulate(p.probs.begin(), p.probs.end(), 0.0), 1.0, 1e-6);
    EXPECT_EQ(predict(model, image, 64), p);
  }
}

TEST(RunStageTest, ZeroEpochsReturnsModelUnchanged) {
  testing::TempDir dir;
  const Manifest train = write_blobs(dir, 2, 1);
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 1);
  const auto out = run_stage(model, train, {}, quick_stage(StageKind::kOriginals, 0), 1);
  EXPECT_TRUE(out.history().empty());
  const auto& a = static_cast<const ReferenceCnn&>(model.backbone());
  const auto& b = static_cast<const ReferenceCnn&>(out.backbone());
  EXPECT_TRUE(std::equal(a.parameter_values().begin(), a.parameter_values().end(),
                         b.parameter_values().begin()));
}

TEST(RunStageTest, SeparableBlobsAreLearned) {
  testing::TempDir dir;
  const Manifest train = write_blobs(dir, 20, 11);
  const Manifest val = write_blobs(dir, 5, 12, Split::kVal);
  // A linear model on colour statistics already separates the classes.
  ASSERT_TRUE(separable_by_colour(train));
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 2);
  const auto out = run_stage(model, train, val, quick_stage(StageKind::kOriginals, 30), 2);
  ASSERT_EQ(out.history().size(), 30u);
  EXPECT_GE(out.history().back().train_accuracy, 0.95);
  EXPECT_GE(accuracy(out, train, kRes), 0.95);
  EXPECT_LT(out.history().back().loss, out.history().front().loss);
  EXPECT_EQ(out.resolution(), kRes);
  for (std::size_t i = 0; i < out.history().size(); ++i) {
    EXPECT_EQ(out.history()[i].epoch, static_cast<int>(i) + 1);
  }
}

TEST(RunStageTest, MemorizesFourImages) {
  testing::TempDir dir;
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < 4; ++i) {
    ImageRecord r;
    r.id = "m" + std::to_string(i);
    r.path = dir / (r.id + ".png");
    r.label = SpeciesLabel(i * 4 + 1);
    r.width = r.height = 32;
    save_image(r.path, testing::random_image(32, 32, 100 + i));
    records.push_back(r);
  }
  const Manifest m(records);
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 3);
  auto config = quick_stage(StageKind::kOriginals, 60, 3e-3);
  config.batch_size = 4;
  const auto out = run_stage(model, m, {}, config, 3);
  for (const auto& r : records) {
    EXPECT_EQ(predict(out, load_image(r.path), kRes).argmax(), r.label->index()) << r.id;
  }
  EXPECT_TRUE(std::isnan(out.history().back().val_accuracy));
}

TEST(RunStageTest, SameSeedSameWeights) {
  testing::TempDir dir;
  const Manifest train = write_blobs(dir, 4, 5);
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 1);
  const auto a = run_stage(model, train, {}, quick_stage(StageKind::kOriginals, 2), 7);
  const auto b = run_stage(model, train, {}, quick_stage(StageKind::kOriginals, 2), 7);
  ASSERT_EQ(a.history().size(), b.history().size());
  for (std::size_t i = 0; i < a.history().size(); ++i) {
    // val_accuracy is NaN without validation data, so compare field-wise.
    EXPECT_EQ(a.history()[i].loss, b.history()[i].loss);
    EXPECT_EQ(a.history()[i].train_accuracy, b.history()[i].train_accuracy);
  }
  const Image image = testing::random_image(32, 32, 1);
  EXPECT_EQ(predict(a, image, kRes), predict(b, image, kRes));
}

TEST(RunStageTest, ImageLoadFailureNamesRecord) {
  ImageRecord r;
  r.id = "ghost_01";
  r.path = "/nonexistent/ghost.png";
  r.label = SpeciesLabel(0);
  r.width = r.height = 8;
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 1);
  try {
    run_stage(model, Manifest({r}), {}, quick_stage(StageKind::kOriginals, 1), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ghost_01"), std::string::npos);
  }
}

TEST(RunStageTest, NonFiniteLossAbortsWithEpoch) {
  testing::TempDir dir;
  const Manifest train = write_blobs(dir, 4, 5);
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 1);
  try {
    run_stage(model, train, {}, quick_stage(StageKind::kOriginals, 5, 1e38), 1);
    FAIL() << "expected a non-finite loss";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

class SynthTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir;
    SynthOptions o;
    o.seed = 5;
    o.image_size = 48;
    o.train_per_class = 4;
    o.test_per_class = 1;
    data_ = new SynthDataset(generate_synthetic(dir_->path(), o));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }
  static testing::TempDir* dir_;
  static SynthDataset* data_;
};
testing::TempDir* SynthTraining::dir_ = nullptr;
SynthDataset* SynthTraining::data_ = nullptr;

TEST_F(SynthTraining, LossDecreasesOverTenEpochs) {
  const Manifest train = load_manifest(data_->train_manifest);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto model =
        build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, seed);
    const auto out = run_stage(model, train, {}, quick_stage(StageKind::kOriginals, 10), seed);
    ASSERT_EQ(out.history().size(), 10u);
    EXPECT_LT(out.history()[9].loss, out.history()[0].loss) << "seed " << seed;
  }
}

TEST_F(SynthTraining, MultistageBookkeepingAndWeightTransfer) {
  const Manifest all = load_manifest(data_->train_manifest);
  auto [train, val] = split_train_val(all, 0.25, 1);
  MultistageInputs data{train, val, train, val};
  auto s1 = quick_stage(StageKind::kOriginals, 3);
  s1.init = InitMode::kFresh;
  auto s2 = quick_stage(StageKind::kCrops, 2, 1e-3);
  const auto model = multistage_train(BackboneKind::kReferenceCnn, data, s1, s2, 9);
  ASSERT_EQ(model.history().size(), 5u);
  EXPECT_EQ(model.stage_starts(), (std::vector<std::size_t>{0, 3}));
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(model.history()[i].epoch, i + 1);
    EXPECT_EQ(model.history()[i].stage, i < 3 ? StageKind::kOriginals : StageKind::kCrops);
  }

  // Stage 2 with zero epochs equals stage-1-only training, bit for bit.
  auto s2_zero = s2;
  s2_zero.epochs = 0;
  const auto only_first = multistage_train(BackboneKind::kReferenceCnn, data, s1, s2_zero, 9);
  const auto initial =
      build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, derive_seed(9, 0));
  const auto direct = run_stage(initial, train, val, s1, 9);
  const auto& a = static_cast<const ReferenceCnn&>(only_first.backbone());
  const auto& b = static_cast<const ReferenceCnn&>(direct.backbone());
  EXPECT_TRUE(std::equal(a.parameter_values().begin(), a.parameter_values().end(),
                         b.parameter_values().begin()));
  EXPECT_EQ(only_first.history(), direct.history());

  auto bad = s2;
  bad.init = InitMode::kFresh;
  EXPECT_THROW(multistage_train(BackboneKind::kReferenceCnn, data, s1, bad, 9), Error);
}

TEST_F(SynthTraining, CheckpointRoundTrip) {
  testing::TempDir dir;
  const Manifest train = load_manifest(data_->train_manifest);
  const auto model = build_backbone(BackboneKind::kReferenceCnn, InitMode::kFresh, std::nullopt, 6);
  auto s1 = quick_stage(StageKind::kOriginals, 2);
  const auto first = run_stage(model, train, train, s1, 6);
  const auto second = run_stage(first, train, {}, quick_stage(StageKind::kCrops, 1), 6);
  save_checkpoint(dir / "m.ckpt", second);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.kind(), BackboneKind::kReferenceCnn);
  EXPECT_EQ(loaded.seed(), 6u);
  EXPECT_EQ(loaded.resolution(), kRes);
  EXPECT_EQ(loaded.stage_starts(), second.stage_starts());
  ASSERT_EQ(loaded.history().size(), 3u);
  EXPECT_EQ(loaded.history()[0], second.history()[0]);
  EXPECT_TRUE(std::isnan(loaded.history()[2].val_accuracy));
  const Image image = load_image(train.records()[0].path);
  EXPECT_EQ(predict(loaded, image, kRes), predict(second, image, kRes));

  const std::string header = read_file(checkpoint_header_path(dir / "m.ckpt"));
  for (const char* line : {"kind reference_cnn\n", "num_classes 16\n", "stage crops\n",
                           "epoch 3\n", "seed 6\n"}) {
    EXPECT_NE(header.find(line), std::string::npos) << line;
  }
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), Error);
}

}  // namespace
}  // namespace birdcls
