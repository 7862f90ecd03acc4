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

// Command line front end. Each subcommand maps onto one library stage and
// reads/writes the documented text formats, so stages can be replayed one at
// a time from the files a previous `run` left behind.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "birdcls/augmentation.h"
#include "birdcls/dataset.h"
#include "birdcls/detection.h"
#include "birdcls/ensemble.h"
#include "birdcls/evaluation.h"
#include "birdcls/io.h"
#include "birdcls/pipeline.h"
#include "birdcls/synth.h"
#include "birdcls/training.h"

namespace fs = std::filesystem;
using namespace birdcls;

namespace {

std::string write_to_string(const auto& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

// --init accepts fresh, pretrained:<path>, checkpoint:<path> or a bare
// checkpoint path.
BackboneHandle initial_model(BackboneKind kind, const std::string& init, std::uint64_t seed) {
  if (init == "fresh") return build_backbone(kind, InitMode::kFresh, std::nullopt, seed);
  if (init.rfind("pretrained:", 0) == 0) {
    return build_backbone(kind, InitMode::kPretrained, fs::path(init.substr(11)), seed);
  }
  const fs::path ckpt = init.rfind("checkpoint:", 0) == 0 ? init.substr(11) : init;
  BackboneHandle model = load_checkpoint(ckpt);
  if (model.kind() != kind) {
    throw Error("checkpoint " + ckpt.string() + " holds a " + std::string(to_string(model.kind())) +
                " model, not " + std::string(to_string(kind)));
  }
  return model;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bird species classification pipeline"};
  app.require_subcommand(1);
  std::string stage_tag;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Build a manifest from <dir>/<species>/<image>");
  std::string ingest_images, ingest_out, ingest_split = "train";
  ingest->add_option("--images", ingest_images, "Image root directory")->required();
  ingest->add_option("--out", ingest_out, "Output manifest")->required();
  ingest->add_option("--split", ingest_split, "Split assigned to every record")
      ->check(CLI::IsMember({"train", "val", "test"}));
  ingest->callback([&] {
    const Manifest m = ingest_directory(ingest_images, parse_split(ingest_split));
    save_manifest(ingest_out, m);
    std::cout << m.size() << " records -> " << ingest_out << "\n";
  });

  // augment
  auto* augment = app.add_subcommand("augment", "Expand training classes per the policy table");
  std::string aug_manifest, aug_policy = "default", aug_out_dir, aug_out_manifest;
  std::uint64_t aug_seed = 0;
  bool aug_overfull = false;
  augment->add_option("--manifest", aug_manifest, "Input manifest")->required();
  augment->add_option("--policy", aug_policy, "Augmentation policy")
      ->check(CLI::IsMember({"default"}));
  augment->add_option("--seed", aug_seed, "Run seed");
  augment->add_option("--out-dir", aug_out_dir, "Directory for augmented images")->required();
  augment->add_option("--out-manifest", aug_out_manifest, "Output manifest")->required();
  augment->add_flag("--allow-overfull", aug_overfull,
                    "Keep classes already above their target instead of failing");
  augment->callback([&] {
    auto result = augment_manifest(load_manifest(aug_manifest), default_policy(), aug_seed,
                                   aug_out_dir, aug_overfull);
    save_manifest(aug_out_manifest, result.manifest);
    std::cout << format_count_report(result.counts);
  });

  // detect
  auto* detect = app.add_subcommand("detect", "Run the bird detector over a manifest");
  std::string det_manifest, det_backend, det_out, det_category{kDefaultBirdCategory};
  double det_threshold = kDefaultScoreThreshold;
  detect->add_option("--manifest", det_manifest, "Input manifest")->required();
  detect->add_option("--backend", det_backend, "fixture:<path> or model:<weights>[,<cfg>[,<labels>]]")
      ->required();
  detect->add_option("--threshold", det_threshold, "Minimum bird score")
      ->check(CLI::Range(0.0, 1.0));
  detect->add_option("--category", det_category, "Category name treated as bird");
  detect->add_option("--out", det_out, "Output detections (fixture format)")->required();
  detect->callback([&] {
    auto backend = make_detector(det_backend);
    const auto results =
        detect_manifest(load_manifest(det_manifest), *backend, det_threshold, det_category);
    write_file_atomic(det_out, write_to_string([&](std::ostream& o) {
                        write_fixture_detections(o, results);
                      }));
    std::size_t boxes = 0, empty = 0;
    for (const auto& r : results) {
      boxes += r.boxes.size();
      empty += r.boxes.empty();
    }
    std::cout << results.size() << " images, " << boxes << " boxes, " << empty
              << " without a bird\n";
  });

  // train
  auto* train = app.add_subcommand("train", "Run one training stage");
  int tr_stage = 1;
  std::string tr_backbone = "reference_cnn", tr_manifest, tr_val, tr_init = "fresh", tr_out;
  std::uint64_t tr_seed = 0;
  std::optional<int> tr_epochs, tr_batch, tr_resolution;
  std::optional<double> tr_lr;
  train->add_option("--stage", tr_stage, "1 (originals) or 2 (crops)")
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--backbone", tr_backbone,
                    "reference_cnn, inception_v3 or inception_resnet_v2");
  train->add_option("--manifest", tr_manifest, "Training manifest")->required();
  train->add_option("--val", tr_val, "Validation manifest");
  train->add_option("--epochs", tr_epochs, "Epochs");
  train->add_option("--lr", tr_lr, "Learning rate");
  train->add_option("--batch", tr_batch, "Batch size");
  train->add_option("--resolution", tr_resolution, "Square input resolution");
  train->add_option("--seed", tr_seed, "Seed");
  train->add_option("--init", tr_init, "fresh, pretrained:<path> or a checkpoint path");
  train->add_option("--out", tr_out, "Output checkpoint")->required();
  train->callback([&] {
    StageConfig config =
        default_stage_config(tr_stage == 1 ? StageKind::kOriginals : StageKind::kCrops);
    if (tr_epochs) config.epochs = *tr_epochs;
    if (tr_lr) config.learning_rate = *tr_lr;
    if (tr_batch) config.batch_size = *tr_batch;
    if (tr_resolution) config.input_resolution = *tr_resolution;
    if (const auto problems = check(config); !problems.empty()) throw Error(problems.front());
    const BackboneHandle initial = initial_model(parse_backbone_kind(tr_backbone), tr_init, tr_seed);
    const Manifest val = tr_val.empty() ? Manifest{} : load_manifest(tr_val);
    const BackboneHandle trained =
        run_stage(initial, load_manifest(tr_manifest), val, config, tr_seed);
    save_checkpoint(tr_out, trained);
    for (const auto& h : trained.history()) {
      std::cout << "epoch " << h.epoch << " loss " << format_double(h.loss) << " train_acc "
                << format_double(h.train_accuracy) << " val_acc "
                << format_double(h.val_accuracy) << "\n";
    }
  });

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Ensemble prediction over a manifest");
  std::string pr_manifest, pr_detections, pr_out;
  std::vector<std::string> pr_models;
  std::optional<int> pr_resolution;
  double pr_pad = 0.0;
  predict_cmd->add_option("--manifest", pr_manifest, "Test manifest")->required();
  predict_cmd->add_option("--detections", pr_detections, "Detections (fixture format)")
      ->required();
  predict_cmd->add_option("--models", pr_models, "Checkpoints, comma separated")
      ->required()
      ->delimiter(',');
  predict_cmd->add_option("--resolution", pr_resolution,
                          "Input resolution (default: that of the first model's last stage)");
  predict_cmd->add_option("--pad", pr_pad, "ROI padding fraction");
  predict_cmd->add_option("--out", pr_out, "Output prediction file")->required();
  predict_cmd->callback([&] {
    std::vector<BackboneHandle> handles;
    std::vector<NamedModel> models;
    handles.reserve(pr_models.size());
    for (const auto& path : pr_models) handles.push_back(load_checkpoint(path));
    for (std::size_t i = 0; i < handles.size(); ++i) {
      models.push_back({fs::path(pr_models[i]).stem().string(), &handles[i]});
    }
    const int resolution = pr_resolution.value_or(handles.front().resolution());
    if (resolution <= 0) throw Error("--resolution is required for untrained checkpoints");
    const auto predictions = predict_manifest(
        load_manifest(pr_manifest), models, load_fixture_detections(pr_detections), resolution,
        pr_pad);
    write_file_atomic(pr_out, write_to_string([&](std::ostream& o) {
                        write_predictions(o, predictions);
                      }));
    std::cout << predictions.size() << " predictions -> " << pr_out << "\n";
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Confusion matrix and metrics");
  std::string ev_truth, ev_predictions, ev_out_dir;
  evaluate->add_option("--truth", ev_truth, "Labeled manifest")->required();
  evaluate->add_option("--predictions", ev_predictions, "Prediction file")->required();
  evaluate->add_option("--out-dir", ev_out_dir, "Output directory")->required();
  evaluate->callback([&] {
    const auto predictions = load_predictions(ev_predictions);
    const auto matrix = confusion_from_predictions(load_manifest(ev_truth), predictions);
    const auto metrics = report(matrix);
    fs::create_directories(ev_out_dir);
    write_file_atomic(fs::path(ev_out_dir) / "confusion.txt", format_confusion(matrix));
    write_file_atomic(fs::path(ev_out_dir) / "metrics.txt", format_report(metrics));
    std::cout << format_report(metrics);
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "Render a confusion matrix heatmap");
  std::string rp_matrix, rp_plot;
  report_cmd->add_option("--matrix", rp_matrix, "Confusion matrix text grid")->required();
  report_cmd->add_option("--plot", rp_plot, "Output image (e.g. .png)")->required();
  report_cmd->callback([&] {
    write_heatmap(rp_plot, load_confusion(rp_matrix));
    std::cout << "heatmap -> " << rp_plot << "\n";
  });

  // run
  auto* run = app.add_subcommand("run", "Execute the whole pipeline from a JSON config");
  std::string run_config;
  std::vector<std::string> run_overrides;
  bool run_quiet = false;
  run->add_option("--config", run_config, "Run configuration (JSON)")->required();
  run->add_option("--set", run_overrides, "Override, e.g. --set stage1.epochs=3");
  run->add_flag("--quiet", run_quiet, "Only print the final summary");
  run->callback([&] {
    stage_tag = "config";
    const RunConfig config = load_run_config(run_config, run_overrides);
    ProgressSink sink;
    if (!run_quiet) {
      sink = [](std::string_view stage, std::string_view message) {
        std::cerr << "[" << stage << "] " << message << "\n";
      };
    }
    const RunResult result = run_end_to_end(config, sink);
    std::cout << format_report(result.metrics);
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic desk-scale dataset");
  std::string sy_out;
  SynthOptions sy;
  synth->add_option("--out-dir", sy_out, "Output directory")->required();
  synth->add_option("--seed", sy.seed, "Seed");
  synth->add_option("--image-size", sy.image_size, "Square image size")
      ->check(CLI::Range(32, 4096));
  synth->add_option("--train-per-class", sy.train_per_class, "Training images per species");
  synth->add_option("--test-per-class", sy.test_per_class, "Test images per species");
  synth->add_option("--without-boxes", sy.test_without_boxes,
                    "Test images left out of the detection fixture");
  synth->callback([&] {
    const SynthDataset d = generate_synthetic(sy_out, sy);
    std::cout << "train manifest " << d.train_manifest.string() << "\n"
              << "test manifest  " << d.test_manifest.string() << "\n"
              << "detections     " << d.detections.string() << "\n"
              << "run config     " << d.config.string() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string tag = stage_tag;
    if (tag.empty() && !app.get_subcommands().empty()) tag = app.get_subcommands().front()->get_name();
    std::cerr << "error: [" << tag << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
