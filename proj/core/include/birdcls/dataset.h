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
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "birdcls/species.h"

namespace birdcls {

enum class Split { kTrain, kVal, kTest };
enum class Provenance { kOriginal, kAugmented, kCrop };

std::string_view to_string(Split split);
std::string_view to_string(Provenance provenance);
Split parse_split(std::string_view text);
Provenance parse_provenance(std::string_view text);

struct ImageRecord {
  std::string id;
  std::filesystem::path path;
  std::optional<SpeciesLabel> label;
  int width = 0;
  int height = 0;
  Split split = Split::kTrain;
  Provenance provenance = Provenance::kOriginal;
  // Id of the record this one was derived from (augmented and crop records).
  std::string source;
  // How it was derived, e.g. "flip" or "crop:0". Empty for originals.
  std::string derivation;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

// Ordered records plus a per-species histogram that is recomputed on every
// construction. Instances are immutable.
class Manifest {
 public:
  Manifest() = default;
  // Validates the record invariants (unique ids, positive dimensions, labels
  // on train/val records). Throws birdcls::Error naming the first offender.
  explicit Manifest(std::vector<ImageRecord> records);

  const std::vector<ImageRecord>& records() const { return records_; }
  const PerSpecies<std::size_t>& class_histogram() const { return histogram_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const ImageRecord* find(std::string_view id) const;

  friend bool operator==(const Manifest& a, const Manifest& b) { return a.records_ == b.records_; }

 private:
  std::vector<ImageRecord> records_;
  PerSpecies<std::size_t> histogram_{};
};

// Manifest text format, one record per line, whitespace separated:
//
//   id path species split [width height [provenance [source derivation]]]
//
// species is a class code or "-" for unlabeled records. Relative paths are
// resolved against the manifest's directory. Blank lines and lines starting
// with '#' are ignored. Missing width/height are probed from the image file.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                        const std::string& source_name, bool check_paths = true);

// Writes all columns. Paths under the manifest's directory are written
// relative to it. The file is replaced atomically.
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
void write_manifest(std::ostream& out, const Manifest& manifest,
                    const std::filesystem::path& base_dir);

// Stratified split. Per class, round(val_fraction * n) records (at least one,
// and at most n - 1) go to validation, chosen by a seeded shuffle. File order
// is preserved inside both outputs; split fields are rewritten.
std::pair<Manifest, Manifest> split_train_val(const Manifest& manifest, double val_fraction,
                                              std::uint64_t seed);

// Builds a manifest from a directory tree whose subdirectories are named by
// species code. Files directly under `root` become unlabeled records.
Manifest ingest_directory(const std::filesystem::path& root, Split split);

Manifest concat(const Manifest& a, const Manifest& b);

}  // namespace birdcls
