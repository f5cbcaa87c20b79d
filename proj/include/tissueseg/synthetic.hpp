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

// Procedural texture patches with exact pixel masks, for desk-scale runs of
// the whole pipeline.

#ifndef TISSUESEG_SYNTHETIC_HPP_
#define TISSUESEG_SYNTHETIC_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tissueseg/ingest.hpp"
#include "tissueseg/manifest.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

struct SyntheticPatch {
  std::string patch_id;
  Tensor pixels;
  SegmentationMask mask;
  PatchLabel label;
};

/// Region layouts a patch can be drawn with.
enum class SyntheticLayout {
  kRandom,    // 1 to 3 regions, chosen per patch
  kSingle,    // one class fills the patch
  kHalfHalf,  // vertical split, left class | right class
};

struct SyntheticOptions {
  int num_classes = 4;
  int patch_size = 224;
  std::uint64_t seed = 0;
  double min_fraction = kDefaultMinFraction;
  SyntheticLayout layout = SyntheticLayout::kRandom;
  // First patch index, so several calls with one seed yield distinct patches.
  int first_index = 0;
};

/// Deterministic in (options, index). Throws kConfigError unless
/// 2 <= num_classes <= 8.
std::vector<SyntheticPatch> make_synthetic(int n_patches, const SyntheticOptions& options);

/// Draws one texture for class k over a region map. Exposed for tests that
/// build their own layouts.
Tensor render_textures(const Grid<std::uint8_t>& class_map, int num_classes, std::uint64_t seed);

/// Taxonomy used for synthetic data: the four LUAD names for c = 4,
/// "class_<k>" otherwise.
TissueTaxonomy synthetic_taxonomy(int num_classes);

struct SyntheticSplits {
  int train = 600;
  int val = 0;
  int test = 100;
};

/// Writes a LUAD-style tree (train/, train_mask/, val/, test/), taxonomy.json
/// and manifest.jsonl under root. Returns the validated manifest.
Manifest write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSplits& splits,
                                 SyntheticOptions options);

}  // namespace tissueseg

#endif  // TISSUESEG_SYNTHETIC_HPP_
