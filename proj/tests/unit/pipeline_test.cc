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

#include "birdcls/pipeline.h"

#include <gtest/gtest.h>

#include <sstream>

#include "birdcls/io.h"
#include "birdcls/synth.h"
#include "test_support.h"

namespace birdcls {
namespace {

namespace fs = std::filesystem;

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir;
    SynthOptions o;
    o.seed = 3;
    o.image_size = 40;
    o.train_per_class = 4;
    o.test_per_class = 2;
    o.test_without_boxes = 4;
    data_ = new SynthDataset(generate_synthetic(dir_->path() / "data", o));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }

  // The synthetic run config with a private work dir and small stages.
  static RunConfig config(const std::string& work, std::vector<std::string> extra = {}) {
    std::vector<std::string> overrides = {
        "work_dir=" + (dir_->path() / work).string(), "stage1.epochs=0", "stage2.epochs=0",
        "stage1.resolution=32", "stage2.resolution=32", "augment=false", "augment_crops=false"};
    overrides.insert(overrides.end(), extra.begin(), extra.end());
    return load_run_config(data_->config, overrides);
  }

  static testing::TempDir* dir_;
  static SynthDataset* data_;
};
testing::TempDir* PipelineTest::dir_ = nullptr;
SynthDataset* PipelineTest::data_ = nullptr;

std::size_t count_files(const fs::path& root) {
  if (!fs::exists(root)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) n += e.is_regular_file();
  return n;
}

TEST_F(PipelineTest, ConfigParsesAndResolvesPaths) {
  const RunConfig c = load_run_config(data_->config);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.train_manifest, data_->train_manifest);
  EXPECT_EQ(c.detector, "fixture:" + data_->detections.string());
  EXPECT_EQ(c.stage1.epochs, 6);
  EXPECT_EQ(c.stage2.input_resolution, 48);
  EXPECT_EQ(c.stage2.stage, StageKind::kCrops);
  ASSERT_EQ(c.backbones.size(), 2u);
  EXPECT_EQ(c.backbones[1].name, "ref_b");
  EXPECT_TRUE(validate_config(c).empty());
}

TEST_F(PipelineTest, OverridesApplyBeforeDecoding) {
  const RunConfig c = load_run_config(
      data_->config, {"stage1.epochs=2", "pad_fraction=0.25", "backbones.0.name=first",
                      "bird_category=Bird"});
  EXPECT_EQ(c.stage1.epochs, 2);
  EXPECT_EQ(c.pad_fraction, 0.25);
  EXPECT_EQ(c.backbones[0].name, "first");
  EXPECT_EQ(c.bird_category, "Bird");
  EXPECT_THROW(load_run_config(data_->config, {"stage1.epochs"}), Error);
  EXPECT_THROW(load_run_config(data_->config, {"stage1.epoch=3"}), Error);
  EXPECT_THROW(load_run_config(data_->config, {"stage1.epochs=\"many\""}), Error);
}

TEST_F(PipelineTest, ConfigJsonRoundTrip) {
  const RunConfig c = config("roundtrip");
  const RunConfig back = parse_run_config(to_json(c), "/elsewhere");
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST_F(PipelineTest, MissingStage2CheckpointIsOneProblem) {
  RunConfig c = config("w");
  c.backbones[0].stage2_init = "checkpoint:" + (dir_->path() / "absent.ckpt").string();
  const auto problems = validate_config(c);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_EQ(problems[0].field, "backbones[0].stage2_init");
}

TEST_F(PipelineTest, ValFractionOutOfRangeRunsNothing) {
  RunConfig c = config("never");
  c.val_fraction = 1.5;
  const auto problems = validate_config(c);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_EQ(problems[0].field, "val_fraction");
  try {
    run_end_to_end(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }
  EXPECT_FALSE(fs::exists(dir_->path() / "never"));
}

TEST_F(PipelineTest, ValidationCoversEveryField) {
  RunConfig c = config("w");
  c.train_manifest = "/nonexistent/train.manifest";
  c.detector = "camera";
  c.score_threshold = 2;
  c.stage1.input_resolution = 8;
  c.backbones.push_back(c.backbones[0]);
  c.backbones.push_back({"iv3", BackboneKind::kInceptionV3, "fresh", "previous_stage"});
  std::set<std::string> fields;
  for (const auto& p : validate_config(c)) fields.insert(p.field);
  EXPECT_EQ(fields, (std::set<std::string>{"train_manifest", "detector", "score_threshold", "stage1",
                                           "backbones[2].name", "backbones[3].init"}));
}

TEST_F(PipelineTest, UntrainedRunCompletesNearChance) {
  const RunConfig c = config("untrained");
  const RunResult r = run_end_to_end(c);
  // 32 balanced test images; untrained models sit near 1/16.
  EXPECT_LE(r.metrics.micro_accuracy, 0.25);
  const auto& a = r.artifacts;
  for (const auto& p : {a.train_split, a.val_split, a.detections, a.crops_train, a.crops_val,
                        a.augmented_train, a.augmented_crops_train, a.predictions, a.confusion,
                        a.metrics}) {
    EXPECT_TRUE(fs::exists(p)) << p;
  }
  EXPECT_EQ(a.checkpoints.size(), 4u);  // two per backbone
  for (const auto& p : a.checkpoints) EXPECT_TRUE(fs::exists(p)) << p;
  const auto predictions = load_predictions(a.predictions);
  ASSERT_EQ(predictions.size(), 32u);
  std::size_t fallbacks = 0;
  for (const auto& p : predictions) fallbacks += p.fallback_used;
  EXPECT_EQ(fallbacks, 4u);
}

// Stages rerun by hand from the persisted files reproduce the run's outputs.
TEST_F(PipelineTest, DownstreamReplayMatchesEndToEnd) {
  const RunConfig c = config("replay", {"stage1.epochs=1", "stage2.epochs=1"});
  const RunResult r = run_end_to_end(c);
  const auto& a = r.artifacts;

  std::vector<BackboneHandle> handles;
  for (const auto& name : {"ref_a", "ref_b"}) {
    handles.push_back(load_checkpoint(c.work_dir / "checkpoints" / (std::string(name) + ".stage2.ckpt")));
  }
  std::vector<NamedModel> models = {{"ref_a", &handles[0]}, {"ref_b", &handles[1]}};
  const auto predictions = predict_manifest(load_manifest(c.test_manifest), models,
                                            load_fixture_detections(a.detections), 32, 0.0);
  std::ostringstream text;
  write_predictions(text, predictions);
  EXPECT_EQ(text.str(), read_file(a.predictions));

  const auto matrix =
      confusion_from_predictions(load_manifest(c.test_manifest), load_predictions(a.predictions));
  EXPECT_EQ(format_confusion(matrix), read_file(a.confusion));
  EXPECT_EQ(format_report(report(matrix)), read_file(a.metrics));

  // Stage 2 replayed from the stage-1 checkpoint gives the same weights.
  const auto stage1 = load_checkpoint(c.work_dir / "checkpoints/ref_a.stage1.ckpt");
  const auto seed = derive_seed(c.seed, stable_hash("ref_a"));
  const auto stage2 = run_stage(stage1, load_manifest(a.augmented_crops_train),
                                load_manifest(a.crops_val), c.stage2, seed);
  const Image probe = load_image(load_manifest(c.test_manifest).records()[0].path);
  EXPECT_EQ(predict(stage2, probe, 32), predict(handles[0], probe, 32));
}

TEST_F(PipelineTest, RerunIsByteIdentical) {
  const RunConfig c = config("twice", {"stage1.epochs=1", "augment=true"});
  const auto first = read_file(run_end_to_end(c).artifacts.predictions);
  const auto second = read_file(run_end_to_end(c).artifacts.predictions);
  EXPECT_EQ(first, second);
}

TEST_F(PipelineTest, Stage2CheckpointInitSkipsStageOne) {
  const RunConfig base = config("resume_src", {"stage1.epochs=1"});
  run_end_to_end(base);
  const auto ckpt = base.work_dir / "checkpoints/ref_a.stage1.ckpt";
  const RunConfig c = config("resume", {"backbones.0.stage2_init=\"checkpoint:" + ckpt.string() + "\""});
  ASSERT_TRUE(validate_config(c).empty());
  const RunResult r = run_end_to_end(c);
  EXPECT_FALSE(fs::exists(c.work_dir / "checkpoints/ref_a.stage1.ckpt"));
  EXPECT_TRUE(fs::exists(c.work_dir / "checkpoints/ref_a.stage2.ckpt"));
  EXPECT_EQ(r.artifacts.checkpoints.size(), 3u);
}

TEST_F(PipelineTest, FailureNamesStageAndItemAndCleansUp) {
  // A test manifest whose second image is not decodable: detection fails
  // after splits and the run config have been written.
  const fs::path bad_dir = dir_->path() / "bad";
  fs::create_directories(bad_dir);
  write_file_atomic(bad_dir / "broken.png", "definitely not a png");
  auto records = load_manifest(data_->test_manifest).records();
  ImageRecord broken = records[0];
  broken.id = "broken_007";
  broken.path = bad_dir / "broken.png";
  records.insert(records.begin() + 1, broken);
  save_manifest(bad_dir / "test.manifest", Manifest(records));

  RunConfig c = config("crash");
  c.test_manifest = bad_dir / "test.manifest";
  try {
    run_end_to_end(c);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "detect");
    EXPECT_NE(std::string(e.what()).find("broken_007"), std::string::npos) << e.what();
  }
  EXPECT_EQ(count_files(c.work_dir), 0u);
}

TEST_F(PipelineTest, ConfusionNeedsEveryPrediction) {
  const Manifest test = load_manifest(data_->test_manifest);
  std::vector<EnsemblePrediction> partial = {{test.records()[0].id, SpeciesLabel(0), 1.0, "m", 0, false}};
  EXPECT_THROW(confusion_from_predictions(test, partial), Error);
}

TEST_F(PipelineTest, MakeCropsNamesAndLinksRecords) {
  const Manifest train = load_manifest(data_->train_manifest);
  const auto detections = load_fixture_detections(data_->detections);
  std::map<std::string, DetectionResult> birds;
  for (const auto& [id, d] : detections) {
    DetectionResult filtered{id, {}};
    for (const auto& b : d.boxes) {
      if (b.category == "bird" && b.score >= 0.5) filtered.boxes.push_back(b);
    }
    birds[id] = filtered;
  }
  testing::TempDir out;
  const Manifest crops = make_crops(train, birds, 0.0, out.path());
  ASSERT_EQ(crops.size(), train.size());
  const auto& first = crops.records()[0];
  EXPECT_EQ(first.id, train.records()[0].id + "__crop0");
  EXPECT_EQ(first.provenance, Provenance::kCrop);
  EXPECT_EQ(first.source, train.records()[0].id);
  EXPECT_EQ(first.label, train.records()[0].label);
  EXPECT_EQ(first.path, out.path() / (first.id + ".png"));
  const auto& box = birds.at(train.records()[0].id).boxes[0];
  EXPECT_EQ(first.width, box.w);
  EXPECT_EQ(first.height, box.h);
}

}  // namespace
}  // namespace birdcls
