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

#include "tissueseg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "tissueseg/error.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Per-patch random parameters of one class texture.
struct TextureDraw {
  double angle = 0.0;
  double phase_x = 0.0;
  double phase_y = 0.0;
  double brightness = 1.0;
};

// Texture intensity in [0,1] for class k at (y, x).
double texture_value(int k, const TextureDraw& d, double y, double x) {
  const int kind = k % 3;
  const double period = 8.0 + 4.0 * (k / 3);
  switch (kind) {
    case 0: {  // stripes
      const double u = x * std::cos(d.angle) + y * std::sin(d.angle);
      return 0.5 + 0.5 * std::sin(kTwoPi * u / period + d.phase_x);
    }
    case 1: {  // dots on a lattice
      const double px = std::fmod(x + d.phase_x * period, period) - period / 2;
      const double py = std::fmod(y + d.phase_y * period, period) - period / 2;
      const double r = period / 4.0;
      return std::exp(-(px * px + py * py) / (2 * r * r));
    }
    default: {  // checkerboard
      const int cx = static_cast<int>(std::floor((x + d.phase_x * period) / (period / 2)));
      const int cy = static_cast<int>(std::floor((y + d.phase_y * period) / (period / 2)));
      return ((cx + cy) & 1) ? 1.0 : 0.0;
    }
  }
}

Grid<std::uint8_t> draw_layout(int size, int num_classes, SyntheticLayout layout,
                               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> classes(num_classes);
  for (int k = 0; k < num_classes; ++k) classes[k] = k;
  std::shuffle(classes.begin(), classes.end(), rng);

  int regions = 1;
  switch (layout) {
    case SyntheticLayout::kSingle: regions = 1; break;
    case SyntheticLayout::kHalfHalf: regions = 2; break;
    case SyntheticLayout::kRandom:
      regions = 1 + static_cast<int>(u(rng) * std::min(3, num_classes));
      regions = std::min(regions, std::min(3, num_classes));
      break;
  }
  Grid<std::uint8_t> map(size, size, static_cast<std::uint8_t>(classes[0]));
  if (regions == 1) return map;

  if (layout == SyntheticLayout::kHalfHalf) {
    for (int y = 0; y < size; ++y) {
      for (int x = size / 2; x < size; ++x) map.at(y, x) = static_cast<std::uint8_t>(classes[1]);
    }
    return map;
  }

  // Half-plane through a point near the centre.
  const double cy = size * (0.3 + 0.4 * u(rng));
  const double cx = size * (0.3 + 0.4 * u(rng));
  const double theta = kTwoPi * u(rng);
  const double ny = std::sin(theta);
  const double nx = std::cos(theta);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if ((y + 0.5 - cy) * ny + (x + 0.5 - cx) * nx > 0) {
        map.at(y, x) = static_cast<std::uint8_t>(classes[1]);
      }
    }
  }
  if (regions == 3) {
    const int h = static_cast<int>(size * (0.3 + 0.3 * u(rng)));
    const int w = static_cast<int>(size * (0.3 + 0.3 * u(rng)));
    const int y0 = static_cast<int>(u(rng) * (size - h));
    const int x0 = static_cast<int>(u(rng) * (size - w));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) map.at(y, x) = static_cast<std::uint8_t>(classes[2]);
    }
  }
  return map;
}

}  // namespace

Tensor render_textures(const Grid<std::uint8_t>& class_map, int num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TextureDraw> draws(num_classes);
  for (auto& d : draws) {
    d.angle = std::numbers::pi * u(rng);
    d.phase_x = kTwoPi * u(rng);
    d.phase_y = u(rng);
    d.brightness = 0.93 + 0.14 * u(rng);
  }
  std::vector<std::array<float, 3>> light(num_classes);
  std::vector<std::array<float, 3>> dark(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const double hue = static_cast<double>(k) / num_classes;
    light[k] = hsv_to_rgb(hue, 0.35, 0.95);
    dark[k] = hsv_to_rgb(hue, 0.85, 0.55);
  }
  std::normal_distribution<float> noise(0.0f, 0.03f);
  const int h = class_map.height();
  const int w = class_map.width();
  Tensor out(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int k = class_map.at(y, x);
      const auto& d = draws[k];
      const float s = static_cast<float>(texture_value(k, d, y, x));
      for (int ch = 0; ch < 3; ++ch) {
        const float v = (dark[k][ch] + s * (light[k][ch] - dark[k][ch])) *
                            static_cast<float>(d.brightness) +
                        noise(rng);
        out.at(ch, y, x) = std::clamp(v, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

std::vector<SyntheticPatch> make_synthetic(int n_patches, const SyntheticOptions& options) {
  if (options.num_classes < 2 || options.num_classes > 8) {
    throw Error(ErrorCode::kConfigError, "synthetic data supports 2 to 8 classes");
  }
  if (options.patch_size < 1) throw Error(ErrorCode::kConfigError, "patch size must be positive");
  std::vector<SyntheticPatch> out(std::max(n_patches, 0));
  parallel_for(out.size(), [&](std::size_t i) {
    const int index = options.first_index + static_cast<int>(i);
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                      static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    SyntheticPatch& p = out[i];
    char id[32];
    std::snprintf(id, sizeof(id), "syn%05d", index);
    p.patch_id = id;
    p.mask = SegmentationMask(options.patch_size, options.patch_size);
    p.mask.labels = draw_layout(options.patch_size, options.num_classes, options.layout, rng);
    p.pixels = render_textures(p.mask.labels, options.num_classes, rng());
    p.label = label_from_mask(p.mask, options.num_classes, options.min_fraction);
  });
  return out;
}

TissueTaxonomy synthetic_taxonomy(int num_classes) {
  if (num_classes == 4) return TissueTaxonomy({"TE", "NEC", "LYM", "TAS"});
  std::vector<std::string> names;
  for (int k = 0; k < num_classes; ++k) names.push_back("class_" + std::to_string(k));
  return TissueTaxonomy(std::move(names));
}

Manifest write_synthetic_dataset(const fs::path& root, const SyntheticSplits& splits,
                                 SyntheticOptions options) {
  fs::create_directories(root);
  synthetic_taxonomy(options.num_classes).save(root / "taxonomy.json");
  Manifest manifest;
  const std::array<std::pair<const char*, int>, 3> parts{
      {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}};
  for (const auto& [split, count] : parts) {
    const auto patches = make_synthetic(count, options);
    std::vector<ManifestRecord> records(patches.size());
    parallel_for(patches.size(), [&](std::size_t i) {
      const auto& p = patches[i];
      records[i] = write_luad_patch(root, split, p.patch_id, p.pixels, &p.mask, p.label);
    });
    for (auto& r : records) manifest.records.push_back(std::move(r));
    options.first_index += count;
  }
  manifest = validate_manifest(std::move(manifest), options.num_classes);
  write_manifest(manifest, root / "manifest.jsonl");
  return manifest;
}

}  // namespace tissueseg
