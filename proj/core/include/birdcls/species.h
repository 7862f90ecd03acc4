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
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace birdcls {

inline constexpr std::size_t kNumSpecies = 16;

// Sorted, so the position of a code is its class index.
inline constexpr std::array<std::string_view, kNumSpecies> kSpeciesCodes = {
    "blasti", "bonegl", "brhkyt", "cbrtsh", "cmnmyn", "gretit", "hilpig", "himbul",
    "himgri", "hsparo", "indvul", "jglowl", "lbicrw", "mgprob", "rebimg", "wcrsrt"};

class SpeciesLabel {
 public:
  // Throws birdcls::Error for an index outside [0, 16).
  explicit SpeciesLabel(std::size_t index);

  static std::optional<SpeciesLabel> from_code(std::string_view code);
  // Same as from_code but throws with the offending code in the message.
  static SpeciesLabel parse(std::string_view code);

  std::size_t index() const { return index_; }
  std::string_view code() const { return kSpeciesCodes[index_]; }

  friend bool operator==(SpeciesLabel a, SpeciesLabel b) { return a.index_ == b.index_; }
  friend auto operator<=>(SpeciesLabel a, SpeciesLabel b) { return a.index_ <=> b.index_; }

 private:
  std::size_t index_;
};

template <typename T>
using PerSpecies = std::array<T, kNumSpecies>;

}  // namespace birdcls
