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

#include "tissueseg/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "tissueseg/error.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

std::vector<Sample> load_split(const Manifest& manifest, const std::string& split) {
  const auto records = manifest.split(split);
  std::vector<Sample> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto& r = *records[i];
    out[i].patch = load_patch(r.path, r.patch_id, r.slide_id, r.origin);
    out[i].label = r.patch_label();
    if (!r.mask_path.empty()) out[i].mask = read_mask_png(r.mask_path);
  });
  return out;
}

NormalizationStats NormalizationStats::compute(const std::vector<Sample>& samples) {
  std::vector<const Tensor*> pixels;
  pixels.reserve(samples.size());
  for (const auto& sample : samples) pixels.push_back(&sample.patch.pixels);
  return compute(pixels);
}

NormalizationStats NormalizationStats::compute(const std::vector<const Tensor*>& images) {
  NormalizationStats s;
  std::array<double, 3> sum{};
  std::array<double, 3> sq{};
  double count = 0.0;
  for (const Tensor* image : images) {
    const auto& px = *image;
    for (int c = 0; c < 3; ++c) {
      for (float v : px.plane(c)) {
        sum[c] += v;
        sq[c] += static_cast<double>(v) * v;
      }
    }
    count += px.plane_size();
  }
  if (count == 0.0) return s;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(sq[c] / count - mean * mean, 1e-8);
    s.mean[c] = static_cast<float>(mean);
    s.stddev[c] = static_cast<float>(std::sqrt(var));
  }
  return s;
}

Tensor NormalizationStats::apply(const Tensor& pixels) const {
  Tensor out(pixels.channels(), pixels.height(), pixels.width());
  for (int c = 0; c < pixels.channels(); ++c) {
    const float m = mean[c % 3];
    const float inv = 1.0f / stddev[c % 3];
    auto src = pixels.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - m) * inv;
  }
  return out;
}

void to_json(nlohmann::json& j, const NormalizationStats& s) {
  j = {{"mean", s.mean}, {"std", s.stddev}};
}

void from_json(const nlohmann::json& j, NormalizationStats& s) {
  s.mean = j.at("mean").get<std::array<float, 3>>();
  s.stddev = j.at("std").get<std::array<float, 3>>();
}

AugmentDraw draw_augment(const AugmentConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentDraw d;
  d.hflip = u(rng) < cfg.hflip_p;
  d.vflip = u(rng) < cfg.vflip_p;
  const double blur_roll = u(rng);
  const double sigma_roll = u(rng);
  d.blur = cfg.blur && blur_roll < cfg.blur_p;
  d.blur_sigma = cfg.blur_sigma_min + sigma_roll * (cfg.blur_sigma_max - cfg.blur_sigma_min);
  return d;
}

Tensor flip(const Tensor& t, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return t;
  Tensor out(t.channels(), t.height(), t.width());
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < t.height(); ++y) {
      const int sy = vertical ? t.height() - 1 - y : y;
      for (int x = 0; x < t.width(); ++x) {
        out.at(c, y, x) = t.at(c, sy, horizontal ? t.width() - 1 - x : x);
      }
    }
  }
  return out;
}

Tensor gaussian_blur(const Tensor& t, int kernel, double sigma) {
  if (kernel < 1 || kernel % 2 == 0) throw Error(ErrorCode::kConfigError, "blur kernel must be odd");
  const int r = kernel / 2;
  std::vector<float> w(kernel);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    w[i + r] = static_cast<float>(v);
    total += v;
  }
  for (auto& v : w) v = static_cast<float>(v / total);

  Tensor tmp(t.channels(), t.height(), t.width());
  Tensor out(t.channels(), t.height(), t.width());
  const int h = t.height();
  const int wd = t.width();
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += w[i + r] * t.at(c, y, std::clamp(x + i, 0, wd - 1));
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        float acc = 0.0f;
        for (int i = -r; i <= r; ++i) acc += w[i + r] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor augment_image(const Tensor& pixels, const AugmentDraw& draw, const AugmentConfig& cfg) {
  Tensor out = flip(pixels, draw.hflip, draw.vflip);
  if (draw.blur) out = gaussian_blur(out, cfg.blur_kernel, draw.blur_sigma);
  return out;
}

std::mt19937_64 sample_rng(std::uint64_t seed, int epoch, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace tissueseg
