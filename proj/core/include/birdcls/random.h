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
#include <random>
#include <string_view>

namespace birdcls {

// Seed derivation. Every random stream in the library is a std::mt19937_64
// seeded from derive_seed(...) so that results depend only on the run seed
// and the identity of the item, never on processing order.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t stable_hash(std::string_view text);

template <typename... Parts>
std::uint64_t derive_seed(std::uint64_t seed, Parts... parts) {
  std::uint64_t h = mix64(seed);
  ((h = mix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

// Thin wrapper over mt19937_64 with distribution code spelled out so that
// sequences are identical across standard library implementations.
//   uniform01: top 53 bits of one draw, scaled by 2^-53, in [0, 1).
//   normal:    Box-Muller cosine branch, two uniform01 draws per sample,
//              z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2).
//   below(n):  rejection sampling on a 64-bit draw.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();
  std::uint64_t below(std::uint64_t n);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace birdcls
