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

// Dataset loaders for the on-disk layouts and weak-label synthesis from
// pixel-annotated regions.
//
// LUAD layout:
//   train/<patch_id>-[a b c d].png    one-hot in the file name, or
//   train/labels.jsonl                {"patch_id", "label"} sidecar
//   train_mask/<patch_id>.png         optional pixel masks (synthetic data)
//   val/img/*.png, val/mask/*.png
//   test/img/*.png, test/mask/*.png
//
// BCSS layout:
//   rois/*.png, masks/*.png           same stem in both directories

#ifndef TISSUESEG_INGEST_HPP_
#define TISSUESEG_INGEST_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tissueseg/manifest.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

inline constexpr double kDefaultMinFraction = 0.01;

/// label_k = 1 iff class k covers at least min_fraction of the valid pixels
/// (and at least one pixel).
PatchLabel label_from_mask(const SegmentationMask& mask, int num_classes,
                           double min_fraction = kDefaultMinFraction);

/// Parses "<id>-[1 0 1 0].png". Returns false when the name carries no
/// label vector.
bool parse_labeled_filename(const std::string& filename, std::string* patch_id,
                            std::vector<int>* label);
std::string labeled_filename(const std::string& patch_id, const std::vector<int>& label);

/// Splits "<slide>-<row>-<col>" ids into provenance; anything else keeps the
/// whole id as slide id with origin (0, 0).
void parse_provenance(const std::string& patch_id, std::string* slide_id,
                      std::array<int, 2>* origin);

/// Builds a validated manifest from a LUAD-style tree. Throws kLayoutError on
/// structural problems or out-of-range mask values, kEmptyLabel for
/// all-zero training labels, kLabelArityMismatch for wrong-length labels.
Manifest load_luad_layout(const std::filesystem::path& root, int num_classes,
                          double min_fraction = kDefaultMinFraction);

struct WeakCrop {
  Tensor pixels;
  SegmentationMask mask;
  PatchLabel label;
  std::array<int, 2> origin{0, 0};
};

/// Uniformly random in-bounds crops of one annotated region. Throws
/// kRoiTooSmall when the region is smaller than the crop.
std::vector<WeakCrop> synthesize_weak_from_pixel(const Tensor& roi, const SegmentationMask& roi_mask,
                                                 int num_classes, int patch_size,
                                                 int samples_per_roi, std::uint64_t seed,
                                                 double min_fraction = kDefaultMinFraction);

struct BcssSynthesisOptions {
  int patch_size = 224;
  int samples_per_roi = 32;
  std::uint64_t seed = 0;
  double min_fraction = kDefaultMinFraction;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

/// Reads rois/ + masks/ under bcss_root, crops every region and writes a
/// LUAD-style tree (with train_mask/) plus manifest.jsonl under out_root.
/// Whole regions are assigned to splits so crops never leak across them.
Manifest synthesize_bcss(const std::filesystem::path& bcss_root,
                         const std::filesystem::path& out_root, int num_classes,
                         const BcssSynthesisOptions& options);

/// Writes one patch into a LUAD-style tree and returns its manifest record.
ManifestRecord write_luad_patch(const std::filesystem::path& root, const std::string& split,
                                const std::string& patch_id, const Tensor& pixels,
                                const SegmentationMask* mask, const PatchLabel& label);

}  // namespace tissueseg

#endif  // TISSUESEG_INGEST_HPP_
