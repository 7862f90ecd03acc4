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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "birdcls/error.h"
#include "birdcls/image.h"
#include "birdcls/io.h"
#include "birdcls/random.h"

namespace birdcls {

namespace fs = std::filesystem;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kOriginal: return "original";
    case Provenance::kAugmented: return "augmented";
    case Provenance::kCrop: return "crop";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw Error("unknown split '" + std::string(text) + "'");
}

Provenance parse_provenance(std::string_view text) {
  if (text == "original") return Provenance::kOriginal;
  if (text == "augmented") return Provenance::kAugmented;
  if (text == "crop") return Provenance::kCrop;
  throw Error("unknown provenance '" + std::string(text) + "'");
}

Manifest::Manifest(std::vector<ImageRecord> records) : records_(std::move(records)) {
  std::unordered_set<std::string_view> ids;
  ids.reserve(records_.size());
  for (const auto& r : records_) {
    if (r.id.empty()) throw Error("record with empty id");
    if (!ids.insert(r.id).second) throw Error("duplicate id '" + r.id + "'");
    if (r.width < 1 || r.height < 1) {
      throw Error("record '" + r.id + "' has non-positive dimensions");
    }
    if (!r.label && r.split != Split::kTest) {
      throw Error("record '" + r.id + "' in split " + std::string(to_string(r.split)) +
                  " has no label");
    }
    if (r.label) ++histogram_[r.label->index()];
  }
}

const ImageRecord* Manifest::find(std::string_view id) const {
  for (const auto& r : records_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

Manifest parse_manifest(std::istream& in, const fs::path& base_dir, const std::string& source_name,
                        bool check_paths) {
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto cols = split_whitespace(line);
    if (cols.empty() || cols[0].front() == '#') continue;
    if (cols.size() != 4 && cols.size() != 6 && cols.size() != 7 && cols.size() != 9) {
      throw ParseError(source_name, row,
                       "expected 4, 6, 7 or 9 columns, got " + std::to_string(cols.size()));
    }
    ImageRecord r;
    try {
      r.id = std::string(cols[0]);
      if (!ids.insert(r.id).second) throw Error("duplicate id '" + r.id + "'");
      r.path = fs::path(std::string(cols[1]));
      if (r.path.is_relative()) r.path = base_dir / r.path;
      if (cols[2] != "-") r.label = SpeciesLabel::parse(cols[2]);
      r.split = parse_split(cols[3]);
      if (check_paths && !fs::exists(r.path)) {
        throw Error("image not found: " + r.path.string());
      }
      if (cols.size() >= 6) {
        r.width = static_cast<int>(parse_int(cols[4]));
        r.height = static_cast<int>(parse_int(cols[5]));
        if (r.width < 1 || r.height < 1) throw Error("non-positive dimensions");
      } else {
        std::tie(r.width, r.height) = probe_image_size(r.path);
      }
      if (cols.size() >= 7) r.provenance = parse_provenance(cols[6]);
      if (cols.size() == 9) {
        if (cols[7] != "-") r.source = std::string(cols[7]);
        if (cols[8] != "-") r.derivation = std::string(cols[8]);
      }
      if (!r.label && r.split != Split::kTest) {
        throw Error("split " + std::string(cols[3]) + " requires a species label");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(source_name, row, e.what());
    }
    records.push_back(std::move(r));
  }
  return Manifest(std::move(records));
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("manifest not found: " + path.string());
  return parse_manifest(in, path.parent_path(), path.string());
}

namespace {

std::string portable_path(const fs::path& path, const fs::path& base_dir) {
  if (!base_dir.empty()) {
    const auto rel = path.lexically_normal().lexically_relative(base_dir.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  }
  return path.generic_string();
}

}  // namespace

void write_manifest(std::ostream& out, const Manifest& manifest, const fs::path& base_dir) {
  out << "# id path species split width height provenance source derivation\n";
  for (const auto& r : manifest.records()) {
    out << r.id << ' ' << portable_path(r.path, base_dir) << ' '
        << (r.label ? r.label->code() : std::string_view("-")) << ' ' << to_string(r.split)
        << ' ' << r.width << ' ' << r.height << ' ' << to_string(r.provenance) << ' '
        << (r.source.empty() ? "-" : r.source) << ' '
        << (r.derivation.empty() ? "-" : r.derivation) << '\n';
  }
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ostringstream out;
  fs::path base = path.parent_path();
  if (base.empty()) base = ".";
  write_manifest(out, manifest, fs::absolute(base));
  write_file_atomic(path, out.str());
}

std::pair<Manifest, Manifest> split_train_val(const Manifest& manifest, double val_fraction,
                                              std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw Error("val_fraction must lie in (0, 1), got " + format_double(val_fraction));
  }
  PerSpecies<std::vector<std::size_t>> members;
  const auto& records = manifest.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw Error("record '" + records[i].id + "' has no label");
    members[records[i].label->index()].push_back(i);
  }
  std::vector<bool> to_val(records.size(), false);
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    auto& idx = members[c];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw Error("class " + std::string(kSpeciesCodes[c]) + " has " +
                  std::to_string(idx.size()) + " record(s); at least 2 are needed to split");
    }
    const auto n = static_cast<long>(idx.size());
    const long k = std::clamp(std::lround(val_fraction * static_cast<double>(n)), 1L, n - 1);
    Rng rng(derive_seed(seed, c));
    rng.shuffle(idx.begin(), idx.end());
    for (long j = 0; j < k; ++j) to_val[idx[static_cast<std::size_t>(j)]] = true;
  }
  std::vector<ImageRecord> train, val;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ImageRecord r = records[i];
    if (to_val[i]) {
      r.split = Split::kVal;
      val.push_back(std::move(r));
    } else {
      r.split = Split::kTrain;
      train.push_back(std::move(r));
    }
  }
  return {Manifest(std::move(train)), Manifest(std::move(val))};
}

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp", ".ppm",
                                             ".pgm", ".tif", ".tiff", ".webp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return kExt.count(ext) > 0;
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  return entries;
}

}  // namespace

Manifest ingest_directory(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw Error("not a directory: " + root.string());
  std::vector<ImageRecord> records;
  auto add = [&](const fs::path& file, std::optional<SpeciesLabel> label) {
    ImageRecord r;
    r.id = label ? std::string(label->code()) + "_" + file.stem().string() : file.stem().string();
    r.path = fs::absolute(file);
    r.label = label;
    r.split = split;
    std::tie(r.width, r.height) = probe_image_size(file);
    records.push_back(std::move(r));
  };
  for (const auto& entry : sorted_entries(root)) {
    if (fs::is_directory(entry)) {
      const auto label = SpeciesLabel::from_code(entry.filename().string());
      if (!label) throw Error("directory name is not a species code: " + entry.string());
      for (const auto& file : sorted_entries(entry)) {
        if (fs::is_regular_file(file) && is_image_file(file)) add(file, label);
      }
    } else if (fs::is_regular_file(entry) && is_image_file(entry)) {
      add(entry, std::nullopt);
    }
  }
  return Manifest(std::move(records));
}

Manifest concat(const Manifest& a, const Manifest& b) {
  std::vector<ImageRecord> records = a.records();
  records.insert(records.end(), b.records().begin(), b.records().end());
  return Manifest(std::move(records));
}

}  // namespace birdcls
