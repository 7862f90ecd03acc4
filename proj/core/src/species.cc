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

#include "birdcls/species.h"

#include <algorithm>

#include "birdcls/error.h"

namespace birdcls {

SpeciesLabel::SpeciesLabel(std::size_t index) : index_(index) {
  if (index >= kNumSpecies) {
    throw Error("species index out of range: " + std::to_string(index));
  }
}

std::optional<SpeciesLabel> SpeciesLabel::from_code(std::string_view code) {
  const auto it = std::lower_bound(kSpeciesCodes.begin(), kSpeciesCodes.end(), code);
  if (it == kSpeciesCodes.end() || *it != code) return std::nullopt;
  return SpeciesLabel(static_cast<std::size_t>(it - kSpeciesCodes.begin()));
}

SpeciesLabel SpeciesLabel::parse(std::string_view code) {
  if (auto label = from_code(code)) return *label;
  throw Error("unknown species code '" + std::string(code) + "'");
}

}  // namespace birdcls
