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

#include "birdcls/evaluation.h"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "birdcls/error.h"
#include "birdcls/image.h"
#include "birdcls/io.h"

namespace birdcls {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (const auto& row : counts_) sum += std::accumulate(row.begin(), row.end(), std::uint64_t{0});
  return sum;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < kNumSpecies; ++i) sum += counts_[i][i];
  return sum;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  return std::accumulate(counts_[truth].begin(), counts_[truth].end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t sum = 0;
  for (const auto& row : counts_) sum += row[predicted];
  return sum;
}

ConfusionMatrix build_confusion(std::span<const SpeciesLabel> truth,
                                std::span<const SpeciesLabel> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error("truth and prediction lists differ in length (" + std::to_string(truth.size()) +
                " vs " + std::to_string(predicted.size()) + ")");
  }
  if (truth.empty()) throw Error("cannot build a confusion matrix from no samples");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

std::optional<double> precision(const ConfusionMatrix& matrix, SpeciesLabel species) {
  const auto c = species.index();
  const auto tp = matrix.at(c, c);
  const auto fp = matrix.column_sum(c) - tp;
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> recall(const ConfusionMatrix& matrix, SpeciesLabel species) {
  const auto c = species.index();
  const auto tp = matrix.at(c, c);
  const auto fn = matrix.row_sum(c) - tp;
  if (tp + fn == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double f1(double p, double r) {
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

MetricsReport report(const ConfusionMatrix& matrix) {
  const auto total = matrix.total();
  if (total == 0) throw Error("cannot report on an empty confusion matrix");
  MetricsReport out;
  double sum_p = 0, sum_r = 0, sum_f = 0;
  std::size_t n_p = 0, n_r = 0, n_f = 0;
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    const SpeciesLabel label(c);
    auto& m = out.per_class[c];
    m.precision = precision(matrix, label);
    m.recall = recall(matrix, label);
    m.support = matrix.row_sum(c);
    if (m.precision && m.recall) m.f1 = f1(*m.precision, *m.recall);
    m.flagged = !m.precision || !m.recall;
    if (m.precision) { sum_p += *m.precision; ++n_p; }
    if (m.recall) { sum_r += *m.recall; ++n_r; }
    if (m.f1) { sum_f += *m.f1; ++n_f; }
  }
  out.macro.precision = n_p ? sum_p / static_cast<double>(n_p) : 0.0;
  out.macro.recall = n_r ? sum_r / static_cast<double>(n_r) : 0.0;
  out.macro.f1 = n_f ? sum_f / static_cast<double>(n_f) : 0.0;
  out.macro.f1_of_means = f1(out.macro.precision, out.macro.recall);
  out.micro_accuracy = static_cast<double>(matrix.trace()) / static_cast<double>(total);
  return out;
}

std::string format_confusion(const ConfusionMatrix& matrix) {
  std::ostringstream out;
  char cell[32];
  std::snprintf(cell, sizeof(cell), "%-8s", "truth\\pr");
  out << cell;
  for (auto code : kSpeciesCodes) {
    std::snprintf(cell, sizeof(cell), " %7s", std::string(code).c_str());
    out << cell;
  }
  out << '\n';
  for (std::size_t r = 0; r < kNumSpecies; ++r) {
    std::snprintf(cell, sizeof(cell), "%-8s", std::string(kSpeciesCodes[r]).c_str());
    out << cell;
    for (std::size_t c = 0; c < kNumSpecies; ++c) {
      std::snprintf(cell, sizeof(cell), " %7llu",
                    static_cast<unsigned long long>(matrix.at(r, c)));
      out << cell;
    }
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix parse_confusion(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t row = 0;
  ConfusionMatrix::Counts counts{};
  bool header_seen = false;
  std::size_t rows_seen = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto cols = split_whitespace(line);
    if (cols.empty() || cols[0].front() == '#') continue;
    if (!header_seen) {
      if (cols.size() != kNumSpecies + 1) {
        throw ParseError(source_name, row, "header must list the 16 species codes");
      }
      for (std::size_t c = 0; c < kNumSpecies; ++c) {
        if (cols[c + 1] != kSpeciesCodes[c]) {
          throw ParseError(source_name, row, "unexpected column '" + std::string(cols[c + 1]) + "'");
        }
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != kNumSpecies + 1) {
      throw ParseError(source_name, row, "expected a species code and 16 counts");
    }
    if (rows_seen >= kNumSpecies || cols[0] != kSpeciesCodes[rows_seen]) {
      throw ParseError(source_name, row, "unexpected row '" + std::string(cols[0]) + "'");
    }
    for (std::size_t c = 0; c < kNumSpecies; ++c) {
      long long v = 0;
      try {
        v = parse_int(cols[c + 1]);
      } catch (const Error& e) {
        throw ParseError(source_name, row, e.what());
      }
      if (v < 0) throw ParseError(source_name, row, "negative count");
      counts[rows_seen][c] = static_cast<std::uint64_t>(v);
    }
    ++rows_seen;
  }
  if (rows_seen != kNumSpecies) {
    throw ParseError(source_name, row, "expected 16 rows, got " + std::to_string(rows_seen));
  }
  return ConfusionMatrix(counts);
}

ConfusionMatrix load_confusion(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("confusion matrix not found: " + path.string());
  return parse_confusion(in, path.string());
}

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * *v);
  return buf;
}

}  // namespace

std::string format_report(const MetricsReport& r) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-8s %10s %10s %10s %8s %s\n", "species", "precision",
                "recall", "f1", "support", "flag");
  out << line;
  for (std::size_t c = 0; c < kNumSpecies; ++c) {
    const auto& m = r.per_class[c];
    std::snprintf(line, sizeof(line), "%-8s %10s %10s %10s %8llu %s\n",
                  std::string(kSpeciesCodes[c]).c_str(), pct(m.precision).c_str(),
                  pct(m.recall).c_str(), pct(m.f1).c_str(),
                  static_cast<unsigned long long>(m.support), m.flagged ? "undefined" : "");
    out << line;
  }
  out << '\n';
  out << "macro_precision " << pct(r.macro.precision) << '\n'
      << "macro_recall " << pct(r.macro.recall) << '\n'
      << "macro_f1 " << pct(r.macro.f1) << '\n'
      << "f1_of_macro_means " << pct(r.macro.f1_of_means) << '\n'
      << "micro_accuracy " << pct(r.micro_accuracy) << '\n';
  return out.str();
}

void write_heatmap(const std::filesystem::path& path, const ConfusionMatrix& matrix) {
  constexpr int kCell = 36;
  constexpr int kMargin = 64;
  constexpr int n = static_cast<int>(kNumSpecies);
  cv::Mat intensity(n, n, CV_8UC1, cv::Scalar(0));
  for (int r = 0; r < n; ++r) {
    const auto row = matrix.row_sum(static_cast<std::size_t>(r));
    for (int c = 0; c < n; ++c) {
      const double frac = row ? static_cast<double>(matrix.at(r, c)) / static_cast<double>(row) : 0.0;
      intensity.at<std::uint8_t>(r, c) = clamp_to_byte(255.0 * frac);
    }
  }
  cv::Mat big;
  cv::resize(intensity, big, cv::Size(n * kCell, n * kCell), 0, 0, cv::INTER_NEAREST);
  cv::Mat colored;
  cv::applyColorMap(big, colored, cv::COLORMAP_VIRIDIS);
  cv::Mat canvas(n * kCell + kMargin, n * kCell + kMargin, CV_8UC3, cv::Scalar(255, 255, 255));
  colored.copyTo(canvas(cv::Rect(kMargin, kMargin, n * kCell, n * kCell)));
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  for (int i = 0; i < n; ++i) {
    const std::string code(kSpeciesCodes[static_cast<std::size_t>(i)]);
    cv::putText(canvas, code, cv::Point(2, kMargin + i * kCell + kCell / 2 + 4), font, 0.35,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, code, cv::Point(kMargin + i * kCell + 1, kMargin - 8), font, 0.3,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    for (int c = 0; c < n; ++c) {
      const auto count = matrix.at(static_cast<std::size_t>(i), static_cast<std::size_t>(c));
      if (count == 0) continue;
      cv::putText(canvas, std::to_string(count),
                  cv::Point(kMargin + c * kCell + 8, kMargin + i * kCell + kCell / 2 + 5), font,
                  0.4, cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
    }
  }
  cv::Mat rgb;
  cv::cvtColor(canvas, rgb, cv::COLOR_BGR2RGB);
  std::vector<std::uint8_t> pixels(rgb.data, rgb.data + rgb.total() * 3);
  save_image(path, Image(rgb.cols, rgb.rows, std::move(pixels)));
}

}  // namespace birdcls
