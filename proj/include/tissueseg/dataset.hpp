// Copyright 2026 The tissueseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// In-memory samples, input normalization and the augmentation pipeline.

#ifndef TISSUESEG_DATASET_HPP_
#define TISSUESEG_DATASET_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/manifest.hpp"
#include "tissueseg/train_config.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

struct Sample {
  Patch patch;
  PatchLabel label;
  std::optional<SegmentationMask> mask;
};

/// Loads every record of one split; pixel masks are loaded when present.
std::vector<Sample> load_split(const Manifest& manifest, const std::string& split);

/// Per-channel mean/std standardization.
struct NormalizationStats {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> stddev{1.0f, 1.0f, 1.0f};

  static NormalizationStats compute(const std::vector<Sample>& samples);
  static NormalizationStats compute(const std::vector<const Tensor*>& images);
  Tensor apply(const Tensor& pixels) const;

  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

void to_json(nlohmann::json& j, const NormalizationStats& s);
void from_json(const nlohmann::json& j, NormalizationStats& s);

/// One random draw of the augmentation pipeline.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  bool blur = false;
  double blur_sigma = 0.0;
};

AugmentDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng);

/// Geometric part of a draw, applicable to images and label maps alike.
Tensor flip(const Tensor& t, bool horizontal, bool vertical);
template <typename T>
Grid<T> flip(const Grid<T>& g, bool horizontal, bool vertical) {
  Grid<T> out(g.height(), g.width());
  for (int y = 0; y < g.height(); ++y) {
    const int sy = vertical ? g.height() - 1 - y : y;
    for (int x = 0; x < g.width(); ++x) {
      out.at(y, x) = g.at(sy, horizontal ? g.width() - 1 - x : x);
    }
  }
  return out;
}

/// Separable Gaussian blur with edge clamping.
Tensor gaussian_blur(const Tensor& t, int kernel, double sigma);

/// Applies a draw to an image (photometric and geometric).
Tensor augment_image(const Tensor& pixels, const AugmentDraw& draw, const AugmentConfig& cfg);

/// Derives a reproducible per-sample generator from (seed, epoch, index).
std::mt19937_64 sample_rng(std::uint64_t seed, int epoch, std::size_t index);

}  // namespace tissueseg

#endif  // TISSUESEG_DATASET_HPP_
