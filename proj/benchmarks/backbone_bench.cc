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

#include <benchmark/benchmark.h>

#include "birdcls/random.h"
#include "birdcls/reference_cnn.h"

namespace birdcls {
namespace {

Image noise_image(int size) {
  Rng rng(2);
  Image image(size, size);
  for (auto& v : image.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  return image;
}

void BM_ReferenceCnnForward(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  const ReferenceCnn cnn(1);
  const auto input = cnn.prepare(noise_image(res), res);
  for (auto _ : state) benchmark::DoNotOptimize(cnn.forward(input, res));
}
BENCHMARK(BM_ReferenceCnnForward)->Arg(32)->Arg(48)->Arg(96)->Unit(benchmark::kMillisecond);

// Forward plus backward for one sample, the inner step of training.
void BM_ReferenceCnnAccumulate(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  ReferenceCnn cnn(1);
  const auto input = cnn.prepare(noise_image(res), res);
  PredictionVector probs;
  for (auto _ : state) {
    cnn.zero_grad();
    benchmark::DoNotOptimize(cnn.accumulate(input, res, 3, probs));
  }
}
BENCHMARK(BM_ReferenceCnnAccumulate)->Arg(32)->Arg(48)->Arg(96)->Unit(benchmark::kMillisecond);

void BM_Prepare(benchmark::State& state) {
  const ReferenceCnn cnn(1);
  const Image image = noise_image(500);
  const int res = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cnn.prepare(image, res));
}
BENCHMARK(BM_Prepare)->Arg(48)->Arg(416)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace birdcls
