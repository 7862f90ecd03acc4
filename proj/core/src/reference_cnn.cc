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

#include "birdcls/reference_cnn.h"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include <Eigen/Core>

#include "birdcls/error.h"
#include "birdcls/random.h"

namespace birdcls {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

constexpr int kBlocks = 4;
constexpr int kKernel = 9;  // 3x3
constexpr int kFeatures = ReferenceCnn::kChannels[kBlocks];
constexpr int kClasses = static_cast<int>(kNumSpecies);
constexpr char kMagic[8] = {'B', 'C', 'R', 'E', 'F', 'C', 'N', '1'};

struct Layout {
  std::array<std::size_t, kBlocks> weight{};
  std::array<std::size_t, kBlocks> bias{};
  std::size_t fc_weight = 0;
  std::size_t fc_bias = 0;
  std::size_t total = 0;
};

constexpr Layout make_layout() {
  Layout l;
  std::size_t off = 0;
  for (int b = 0; b < kBlocks; ++b) {
    const auto cin = static_cast<std::size_t>(ReferenceCnn::kChannels[b]);
    const auto cout = static_cast<std::size_t>(ReferenceCnn::kChannels[b + 1]);
    l.weight[b] = off;
    off += cout * cin * kKernel;
    l.bias[b] = off;
    off += cout;
  }
  l.fc_weight = off;
  off += static_cast<std::size_t>(kClasses) * kFeatures;
  l.fc_bias = off;
  off += kClasses;
  l.total = off;
  return l;
}

constexpr Layout kLayout = make_layout();

inline float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// col[(c * 9 + ky * 3 + kx), y * w + x] = in[c, y + ky - 1, x + kx - 1], zero padded.
void im2col(const float* in, int channels, int h, int w, float* col) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const float* src = in + c * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = col + (static_cast<std::size_t>(c) * kKernel + ky * 3 + kx) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          float* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::memset(row, 0, sizeof(float) * w);
            continue;
          }
          const float* srow = src + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            row[x] = (sx < 0 || sx >= w) ? 0.0f : srow[sx];
          }
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int h, int w, float* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::memset(out, 0, sizeof(float) * plane * channels);
  for (int c = 0; c < channels; ++c) {
    float* dst = out + c * plane;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* src = col + (static_cast<std::size_t>(c) * kKernel + ky * 3 + kx) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const float* row = src + static_cast<std::size_t>(y) * w;
          float* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - 1;
            if (sx >= 0 && sx < w) drow[sx] += row[x];
          }
        }
      }
    }
  }
}

}  // namespace

struct ReferenceCnn::Trace {
  struct Block {
    int h = 0, w = 0;             // input spatial size
    std::vector<float> col;       // im2col of the input
    std::vector<float> pre;       // convolution output before swish
    std::vector<std::uint32_t> argmax;  // pooled position -> index into pre
    std::vector<float> pooled;    // block output
  };
  std::array<Block, kBlocks> blocks;
  std::array<float, kFeatures> features{};
  std::array<float, kClasses> logits{};
};

ReferenceCnn::ReferenceCnn(std::uint64_t seed)
    : params_(kLayout.total, 0.0f), grads_(kLayout.total, 0.0f) {
  Rng rng(seed);
  for (int b = 0; b < kBlocks; ++b) {
    const int fan_in = kChannels[b] * kKernel;
    const int cout = kChannels[b + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    for (int i = 0; i < cout * fan_in; ++i) {
      params_[kLayout.weight[b] + i] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  const double bound = std::sqrt(6.0 / (kFeatures + kClasses));
  for (int i = 0; i < kClasses * kFeatures; ++i) {
    params_[kLayout.fc_weight + i] = static_cast<float>(rng.uniform(-bound, bound));
  }
}

std::unique_ptr<Backbone> ReferenceCnn::clone() const {
  return std::make_unique<ReferenceCnn>(*this);
}

std::size_t ReferenceCnn::parameter_count() { return kLayout.total; }

std::vector<float> ReferenceCnn::prepare(const Image& image, int resolution) const {
  if (resolution < kMinResolution) {
    throw Error("reference_cnn resolution must be at least " + std::to_string(kMinResolution));
  }
  const Image resized = resize(image, resolution, resolution);
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  std::vector<float> input(plane * 3);
  const auto px = resized.pixels();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      input[c * plane + i] = (static_cast<float>(px[i * 3 + c]) - 127.5f) / 64.0f;
    }
  }
  return input;
}

void ReferenceCnn::run_forward(std::span<const float> input, int resolution, Trace& t) const {
  if (resolution < kMinResolution ||
      input.size() != static_cast<std::size_t>(3) * resolution * resolution) {
    throw Error("reference_cnn expects a 3x" + std::to_string(resolution) + "x" +
                std::to_string(resolution) + " input");
  }
  const float* x = input.data();
  int h = resolution, w = resolution;
  for (int b = 0; b < kBlocks; ++b) {
    auto& blk = t.blocks[b];
    const int cin = kChannels[b];
    const int cout = kChannels[b + 1];
    const auto plane = static_cast<std::size_t>(h) * w;
    blk.h = h;
    blk.w = w;
    blk.col.resize(static_cast<std::size_t>(cin) * kKernel * plane);
    im2col(x, cin, h, w, blk.col.data());
    blk.pre.resize(static_cast<std::size_t>(cout) * plane);
    const ConstMatMap weight(params_.data() + kLayout.weight[b], cout, cin * kKernel);
    const ConstVecMap bias(params_.data() + kLayout.bias[b], cout);
    const ConstMatMap col(blk.col.data(), cin * kKernel, static_cast<Eigen::Index>(plane));
    MatMap pre(blk.pre.data(), cout, static_cast<Eigen::Index>(plane));
    pre.noalias() = weight * col;
    pre.colwise() += bias;

    const int ho = h / 2, wo = w / 2;
    const auto out_plane = static_cast<std::size_t>(ho) * wo;
    blk.pooled.resize(static_cast<std::size_t>(cout) * out_plane);
    blk.argmax.resize(blk.pooled.size());
    for (int c = 0; c < cout; ++c) {
      const float* z = blk.pre.data() + c * plane;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::uint32_t best_idx = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::uint32_t>((2 * oy + dy) * w + 2 * ox + dx);
              const float a = z[idx] * sigmoidf(z[idx]);
              if (a > best) {
                best = a;
                best_idx = idx;
              }
            }
          }
          const std::size_t o = c * out_plane + static_cast<std::size_t>(oy) * wo + ox;
          blk.pooled[o] = best;
          blk.argmax[o] = static_cast<std::uint32_t>(c * plane) + best_idx;
        }
      }
    }
    x = blk.pooled.data();
    h = ho;
    w = wo;
  }
  const auto plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < kFeatures; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += x[c * plane + i];
    t.features[c] = static_cast<float>(sum / static_cast<double>(plane));
  }
  const ConstMatMap fc(params_.data() + kLayout.fc_weight, kClasses, kFeatures);
  const ConstVecMap fc_bias(params_.data() + kLayout.fc_bias, kClasses);
  Eigen::Map<Eigen::VectorXf> logits(t.logits.data(), kClasses);
  logits.noalias() = fc * Eigen::Map<const Eigen::VectorXf>(t.features.data(), kFeatures);
  logits += fc_bias;
}

PredictionVector ReferenceCnn::forward(std::span<const float> input, int resolution) const {
  Trace t;
  run_forward(input, resolution, t);
  return softmax(t.logits);
}

double ReferenceCnn::accumulate(std::span<const float> input, int resolution, std::size_t label,
                                PredictionVector& probs) {
  if (label >= kNumSpecies) throw Error("label out of range");
  Trace t;
  run_forward(input, resolution, t);
  probs = softmax(t.logits);
  const double loss = -std::log(std::max(probs.probs[label], 1e-300));

  // Head.
  Eigen::VectorXf dlogits(kClasses);
  for (int k = 0; k < kClasses; ++k) {
    dlogits[k] = static_cast<float>(probs.probs[k] - (static_cast<std::size_t>(k) == label));
  }
  const Eigen::Map<const Eigen::VectorXf> features(t.features.data(), kFeatures);
  MatMap(grads_.data() + kLayout.fc_weight, kClasses, kFeatures).noalias() +=
      dlogits * features.transpose();
  VecMap(grads_.data() + kLayout.fc_bias, kClasses) += dlogits;
  const ConstMatMap fc(params_.data() + kLayout.fc_weight, kClasses, kFeatures);
  const Eigen::VectorXf dfeatures = fc.transpose() * dlogits;

  // Global average pool: spread evenly over the last block's output.
  const auto& last = t.blocks[kBlocks - 1];
  const auto last_plane = static_cast<std::size_t>(last.h / 2) * (last.w / 2);
  std::vector<float> dout(last.pooled.size());
  for (int c = 0; c < kFeatures; ++c) {
    const float g = dfeatures[c] / static_cast<float>(last_plane);
    std::fill_n(dout.begin() + static_cast<std::ptrdiff_t>(c * last_plane), last_plane, g);
  }

  std::vector<float> dpre, dcol;
  for (int b = kBlocks - 1; b >= 0; --b) {
    const auto& blk = t.blocks[b];
    const int cin = kChannels[b];
    const int cout = kChannels[b + 1];
    const auto plane = static_cast<std::size_t>(blk.h) * blk.w;
    dpre.assign(static_cast<std::size_t>(cout) * plane, 0.0f);
    for (std::size_t o = 0; o < dout.size(); ++o) {
      const auto idx = blk.argmax[o];
      const float z = blk.pre[idx];
      const float s = sigmoidf(z);
      dpre[idx] += dout[o] * (s + z * s * (1.0f - s));
    }
    const ConstMatMap dz(dpre.data(), cout, static_cast<Eigen::Index>(plane));
    const ConstMatMap col(blk.col.data(), cin * kKernel, static_cast<Eigen::Index>(plane));
    MatMap(grads_.data() + kLayout.weight[b], cout, cin * kKernel).noalias() +=
        dz * col.transpose();
    VecMap(grads_.data() + kLayout.bias[b], cout) += dz.rowwise().sum();
    if (b == 0) break;
    const ConstMatMap weight(params_.data() + kLayout.weight[b], cout, cin * kKernel);
    dcol.resize(static_cast<std::size_t>(cin) * kKernel * plane);
    MatMap(dcol.data(), cin * kKernel, static_cast<Eigen::Index>(plane)).noalias() =
        weight.transpose() * dz;
    dout.resize(static_cast<std::size_t>(cin) * plane);
    col2im(dcol.data(), cin, blk.h, blk.w, dout.data());
  }
  return loss;
}

void ReferenceCnn::save_weights(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t n = params_.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
}

void ReferenceCnn::load_weights(std::istream& in) {
  char magic[sizeof(kMagic)];
  std::uint64_t n = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a reference_cnn weight blob");
  }
  if (!in.read(reinterpret_cast<char*>(&n), sizeof(n)) || n != params_.size()) {
    throw Error("reference_cnn weight blob has an incompatible parameter count");
  }
  if (!in.read(reinterpret_cast<char*>(params_.data()),
               static_cast<std::streamsize>(n * sizeof(float)))) {
    throw Error("truncated reference_cnn weight blob");
  }
  std::fill(grads_.begin(), grads_.end(), 0.0f);
}

}  // namespace birdcls
