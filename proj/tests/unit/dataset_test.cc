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

#include "birdcls/dataset.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "birdcls/error.h"
#include "birdcls/io.h"
#include "test_support.h"

namespace birdcls {
namespace {

ImageRecord labeled(const std::string& id, std::size_t cls, Split split = Split::kTrain) {
  ImageRecord r;
  r.id = id;
  r.path = "/nonexistent/" + id + ".png";
  r.label = SpeciesLabel(cls);
  r.width = 8;
  r.height = 8;
  r.split = split;
  return r;
}

// n records per class for every class in `classes`.
Manifest balanced(std::size_t per_class, std::size_t classes = kNumSpecies) {
  std::vector<ImageRecord> records;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      records.push_back(labeled(std::string(kSpeciesCodes[c]) + "_" + std::to_string(i), c));
    }
  }
  return Manifest(std::move(records));
}

Manifest parse(const std::string& text, bool check_paths = false) {
  std::istringstream in(text);
  return parse_manifest(in, "/data", "test.manifest", check_paths);
}

TEST(ManifestTest, EmptyBodyGivesEmptyManifest) {
  const Manifest m = parse("# only a comment\n\n");
  EXPECT_TRUE(m.empty());
  for (auto count : m.class_histogram()) EXPECT_EQ(count, 0u);
}

TEST(ManifestTest, HistogramCountsPerLabel) {
  // 150 originals with the smallest class at 5 and the largest at 20.
  std::vector<ImageRecord> records;
  const std::size_t sizes[kNumSpecies] = {5, 20, 9, 10, 10, 10, 9, 9, 9, 9, 9, 9, 8, 8, 8, 8};
  std::size_t total = 0;
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    for (std::size_t i = 0; i < sizes[c]; ++i) {
      records.push_back(labeled(std::to_string(c) + "_" + std::to_string(i), c));
    }
    total += sizes[c];
  }
  ASSERT_EQ(total, 150u);
  const Manifest m(std::move(records));
  const auto& h = m.class_histogram();
  EXPECT_EQ(*std::min_element(h.begin(), h.end()), 5u);
  EXPECT_EQ(*std::max_element(h.begin(), h.end()), 20u);
  for (std::size_t c = 0; c < kNumSpecies; ++c) EXPECT_EQ(h[c], sizes[c]);
}

TEST(ManifestTest, DuplicateIdIsNamed) {
  try {
    parse("img_007 a.png blasti train 4 4\nimg_007 b.png bonegl train 4 4\n");
    FAIL() << "expected an error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 2u);
    EXPECT_NE(std::string(e.what()).find("img_007"), std::string::npos);
  }
}

TEST(ManifestTest, MalformedRowReportsRowNumber) {
  try {
    parse("a x.png blasti train 4 4\n\nb y.png blasti\n");
    FAIL() << "expected an error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 3u);
  }
}

TEST(ManifestTest, UnknownSpeciesRejected) {
  EXPECT_THROW(parse("a x.png sparrow train 4 4\n"), ParseError);
}

TEST(ManifestTest, TrainRecordsNeedLabels) {
  EXPECT_THROW(parse("a x.png - train 4 4\n"), ParseError);
  const Manifest m = parse("a x.png - test 4 4\n");
  EXPECT_FALSE(m.records()[0].label.has_value());
}

TEST(ManifestTest, NonPositiveDimensionsRejected) {
  EXPECT_THROW(parse("a x.png blasti train 0 4\n"), ParseError);
}

TEST(ManifestTest, MissingImageRejectedWhenCheckingPaths) {
  EXPECT_THROW(parse("a missing.png blasti train 4 4\n", true), ParseError);
}

TEST(ManifestTest, MissingFileThrows) {
  testing::TempDir dir;
  EXPECT_THROW(load_manifest(dir / "absent.manifest"), Error);
}

TEST(ManifestTest, RelativePathsResolveAgainstBase) {
  const Manifest m = parse("a imgs/x.png blasti train 4 4\nb /abs/y.png bonegl val 4 4\n");
  EXPECT_EQ(m.records()[0].path, std::filesystem::path("/data/imgs/x.png"));
  EXPECT_EQ(m.records()[1].path, std::filesystem::path("/abs/y.png"));
  EXPECT_EQ(m.records()[1].split, Split::kVal);
}

TEST(ManifestTest, SaveLoadRoundTripWithProbedSizes) {
  testing::TempDir dir;
  save_image(dir / "imgs/a.png", testing::random_image(5, 7, 1));
  save_image(dir / "imgs/b.png", testing::random_image(3, 2, 2));
  write_file_atomic(dir / "in.manifest", "a imgs/a.png blasti train\nb imgs/b.png - test\n");
  const Manifest m = load_manifest(dir / "in.manifest");
  EXPECT_EQ(m.records()[0].width, 5);
  EXPECT_EQ(m.records()[0].height, 7);
  EXPECT_EQ(m.records()[1].width, 3);

  std::vector<ImageRecord> recs = m.records();
  recs[1].provenance = Provenance::kCrop;
  recs[1].source = "a";
  recs[1].derivation = "crop:0";
  const Manifest changed(recs);
  save_manifest(dir / "out.manifest", changed);
  EXPECT_EQ(load_manifest(dir / "out.manifest"), changed);
  // Paths below the manifest's directory are stored relative to it.
  EXPECT_NE(read_file(dir / "out.manifest").find(" imgs/a.png "), std::string::npos);
}

TEST(SplitTest, ExactlyTwoPerClassAtTwentyPercent) {
  const auto [train, val] = split_train_val(balanced(10), 0.2, 7);
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    EXPECT_EQ(val.class_histogram()[c], 2u);
    EXPECT_EQ(train.class_histogram()[c], 8u);
  }
  for (const auto& r : val.records()) EXPECT_EQ(r.split, Split::kVal);
  for (const auto& r : train.records()) EXPECT_EQ(r.split, Split::kTrain);
}

TEST(SplitTest, SameSeedIsByteIdentical) {
  testing::TempDir dir;
  const Manifest m = balanced(10);
  const auto a = split_train_val(m, 0.2, 7);
  const auto b = split_train_val(m, 0.2, 7);
  save_manifest(dir / "a_train", a.first);
  save_manifest(dir / "b_train", b.first);
  save_manifest(dir / "a_val", a.second);
  save_manifest(dir / "b_val", b.second);
  EXPECT_EQ(read_file(dir / "a_train"), read_file(dir / "b_train"));
  EXPECT_EQ(read_file(dir / "a_val"), read_file(dir / "b_val"));
}

std::set<std::string> ids(const Manifest& m) {
  std::set<std::string> out;
  for (const auto& r : m.records()) out.insert(r.id);
  return out;
}

TEST(SplitTest, DifferentSeedsGiveDifferentValidPartitions) {
  const Manifest m = balanced(10);
  ASSERT_EQ(m.size(), 160u);
  const auto a = split_train_val(m, 0.2, 7);
  const auto b = split_train_val(m, 0.2, 8);
  const auto all = ids(m);
  for (const auto* part : {&a, &b}) {
    auto t = ids(part->first), v = ids(part->second);
    std::set<std::string> both;
    std::set_intersection(t.begin(), t.end(), v.begin(), v.end(), std::inserter(both, both.end()));
    EXPECT_TRUE(both.empty());
    t.insert(v.begin(), v.end());
    EXPECT_EQ(t, all);
  }
  EXPECT_NE(ids(a.second), ids(b.second));
}

// Partition and stratification over random manifests.
TEST(SplitTest, PartitionPropertyOnRandomManifests) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageRecord> records;
    PerSpecies<std::size_t> sizes{};
    for (std::size_t c = 0; c < kNumSpecies; ++c) {
      if (rng.below(4) == 0) continue;
      sizes[c] = 2 + rng.below(20);
    }
    // Interleave classes so order preservation is meaningful.
    std::size_t counter = 0;
    for (std::size_t round = 0; round < 22; ++round) {
      for (std::size_t c = 0; c < kNumSpecies; ++c) {
        if (round < sizes[c]) records.push_back(labeled("r" + std::to_string(counter++), c));
      }
    }
    if (records.empty()) continue;
    const Manifest m(records);
    const double f = 0.05 + 0.9 * rng.uniform01();
    const auto [train, val] = split_train_val(m, f, rng.below(1000));
    EXPECT_EQ(train.size() + val.size(), m.size());
    for (std::size_t c = 0; c < kNumSpecies; ++c) {
      if (sizes[c] == 0) continue;
      const long n = static_cast<long>(sizes[c]);
      const long expected = std::clamp(std::lround(f * n), 1L, n - 1);
      EXPECT_EQ(static_cast<long>(val.class_histogram()[c]), expected);
      EXPECT_EQ(train.class_histogram()[c] + val.class_histogram()[c], sizes[c]);
    }
    // File order is preserved inside each output.
    for (const Manifest* part : {&train, &val}) {
      std::size_t last = 0;
      for (const auto& r : part->records()) {
        const std::size_t pos = std::stoul(r.id.substr(1));
        EXPECT_TRUE(&r == &part->records().front() || pos > last);
        last = pos;
      }
    }
  }
}

TEST(SplitTest, Errors) {
  EXPECT_THROW(split_train_val(balanced(10), 0.0, 1), Error);
  EXPECT_THROW(split_train_val(balanced(10), 1.5, 1), Error);
  EXPECT_THROW(split_train_val(balanced(1), 0.2, 1), Error);
  Manifest unlabeled({[] {
    ImageRecord r;
    r.id = "t";
    r.path = "t.png";
    r.width = r.height = 1;
    r.split = Split::kTest;
    return r;
  }()});
  EXPECT_THROW(split_train_val(unlabeled, 0.2, 1), Error);
}

TEST(IngestTest, LabelsFromDirectoryNames) {
  testing::TempDir dir;
  save_image(dir / "imgs/blasti/1.png", testing::random_image(4, 4, 1));
  save_image(dir / "imgs/blasti/2.png", testing::random_image(4, 4, 2));
  save_image(dir / "imgs/wcrsrt/a.png", testing::random_image(6, 3, 3));
  std::ofstream(dir / "imgs/wcrsrt/notes.txt") << "ignored";
  const Manifest m = ingest_directory(dir / "imgs", Split::kTrain);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.class_histogram()[0], 2u);
  EXPECT_EQ(m.class_histogram()[15], 1u);
  EXPECT_EQ(m.records()[2].width, 6);

  save_image(dir / "imgs/sparrow/x.png", testing::random_image(2, 2, 4));
  EXPECT_THROW(ingest_directory(dir / "imgs", Split::kTrain), Error);
}

TEST(ConcatTest, RejectsDuplicateIds) {
  const Manifest a = balanced(1, 2);
  EXPECT_EQ(concat(a, Manifest{}).size(), 2u);
  EXPECT_THROW(concat(a, a), Error);
}

}  // namespace
}  // namespace birdcls
