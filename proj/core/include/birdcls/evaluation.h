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
#include <optional>
#include <span>
#include <string>

#include "birdcls/species.h"

namespace birdcls {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  using Counts = PerSpecies<PerSpecies<std::uint64_t>>;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(const Counts& counts) : counts_(counts) {}

  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth][predicted];
  }
  void add(SpeciesLabel truth, SpeciesLabel predicted) {
    ++counts_[truth.index()][predicted.index()];
  }

  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;
  const Counts& counts() const { return counts_; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  Counts counts_{};
};

// Throws birdcls::Error on length mismatch or empty input.
ConfusionMatrix build_confusion(std::span<const SpeciesLabel> truth,
                                std::span<const SpeciesLabel> predicted);

// TP / (TP + FP), FP being the column sum off the diagonal. Undefined for an
// empty column.
std::optional<double> precision(const ConfusionMatrix& matrix, SpeciesLabel species);
// TP / (TP + FN), FN being the row sum off the diagonal. Undefined for an
// empty row.
std::optional<double> recall(const ConfusionMatrix& matrix, SpeciesLabel species);
// Harmonic mean; f1(0, 0) is 0.
double f1(double precision, double recall);

struct ClassMetrics {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;  // defined when both inputs are
  std::uint64_t support = 0;
  // Set when any metric is undefined; such classes are left out of the
  // corresponding macro mean.
  bool flagged = false;
};

struct MacroMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;  // mean of per-class F1
  // Harmonic mean of the macro precision and recall, i.e. the summary a
  // table of class-averaged precision/recall/F1 usually reports.
  double f1_of_means = 0.0;
};

struct MetricsReport {
  PerSpecies<ClassMetrics> per_class{};
  MacroMetrics macro;
  double micro_accuracy = 0.0;
};

// Throws on an empty matrix.
MetricsReport report(const ConfusionMatrix& matrix);

// Grid with a header row and column of species codes.
std::string format_confusion(const ConfusionMatrix& matrix);
ConfusionMatrix parse_confusion(std::istream& in, const std::string& source_name);
ConfusionMatrix load_confusion(const std::filesystem::path& path);
// Per-class table and macro/micro summary, percentages to two decimals.
std::string format_report(const MetricsReport& report);

// Row-normalized heatmap with species labels, written through the image codec.
void write_heatmap(const std::filesystem::path& path, const ConfusionMatrix& matrix);

}  // namespace birdcls
