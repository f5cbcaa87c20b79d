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

// Value types shared across the pipeline. Everything here is plain data;
// construct once, then pass around by const reference.

#ifndef TISSUESEG_TYPES_HPP_
#define TISSUESEG_TYPES_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tissueseg/tensor.hpp"

namespace tissueseg {

/// Value stored in 8-bit mask files for pixels excluded from evaluation.
inline constexpr std::uint8_t kInvalidLabel = 255;

enum class BackgroundPolicy { kNone, kWhiteThreshold };

/// Ordered tissue classes. Class order is the channel order everywhere.
class TissueTaxonomy {
 public:
  TissueTaxonomy() = default;
  TissueTaxonomy(std::vector<std::string> class_names,
                 BackgroundPolicy policy = BackgroundPolicy::kNone);

  int num_classes() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  BackgroundPolicy background_policy() const { return policy_; }

  static TissueTaxonomy load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const TissueTaxonomy&, const TissueTaxonomy&) = default;

 private:
  std::vector<std::string> class_names_;
  BackgroundPolicy policy_ = BackgroundPolicy::kNone;
};

/// RGB tile with provenance. Pixels are stored planar (3 x H x W) in [0,1].
struct Patch {
  Tensor pixels;
  std::string slide_id;
  std::array<int, 2> origin{0, 0};
  std::string patch_id;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }

  /// Throws kShapeError if the tensor is not 3-channel or values leave [0,1].
  void validate() const;
};

/// Presence/absence vector over the taxonomy.
struct PatchLabel {
  std::vector<std::uint8_t> presence;

  int num_classes() const { return static_cast<int>(presence.size()); }
  int count_present() const;
  bool is_present(int k) const { return presence.at(k) != 0; }

  friend bool operator==(const PatchLabel&, const PatchLabel&) = default;
};

/// Named intermediate layers of the classifier, shallow to deep.
enum class Tap { kB4_3 = 0, kB5_2 = 1, kBn7 = 2 };
inline constexpr std::array<Tap, 3> kAllTaps{Tap::kB4_3, Tap::kB5_2, Tap::kBn7};

std::string_view tap_name(Tap tap);
Tap parse_tap(std::string_view name);

/// Per-class activation maps at one tap.
struct CamStack {
  Tensor maps;
  Tap tap = Tap::kBn7;

  int num_classes() const { return maps.channels(); }
  friend bool operator==(const CamStack&, const CamStack&) = default;
};

/// Per-tap label maps for one patch, all at the patch resolution.
struct PseudoMaskSet {
  std::map<Tap, Grid<std::uint8_t>> masks;
  std::string patch_id;

  /// Throws kShapeError unless all three taps are present at height x width
  /// and every label is below num_classes.
  void validate(int num_classes, int height, int width) const;

  friend bool operator==(const PseudoMaskSet&, const PseudoMaskSet&) = default;
};

/// Per-class per-pixel probabilities plus the validity channel.
struct ProbabilityMap {
  Tensor probs;
  Grid<std::uint8_t> valid;

  static ProbabilityMap all_valid(Tensor probs);
  friend bool operator==(const ProbabilityMap&, const ProbabilityMap&) = default;
};

/// Per-pixel class labels; labels are meaningful only where valid is set.
struct SegmentationMask {
  Grid<std::uint8_t> labels;
  Grid<std::uint8_t> valid;

  SegmentationMask() = default;
  SegmentationMask(int height, int width)
      : labels(height, width, 0), valid(height, width, 1) {}

  int height() const { return labels.height(); }
  int width() const { return labels.width(); }

  /// Encodes to the on-disk convention: class index, kInvalidLabel where
  /// invalid.
  Grid<std::uint8_t> to_stored() const;
  static SegmentationMask from_stored(const Grid<std::uint8_t>& stored);

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

/// Classes that appear at valid pixels.
std::vector<int> classes_present(const SegmentationMask& mask, int num_classes);

// JSON round-trip for every value type.
void to_json(nlohmann::json& j, const TissueTaxonomy& t);
void from_json(const nlohmann::json& j, TissueTaxonomy& t);
void to_json(nlohmann::json& j, const Tensor& t);
void from_json(const nlohmann::json& j, Tensor& t);
void to_json(nlohmann::json& j, const Patch& p);
void from_json(const nlohmann::json& j, Patch& p);
void to_json(nlohmann::json& j, const PatchLabel& l);
void from_json(const nlohmann::json& j, PatchLabel& l);
void to_json(nlohmann::json& j, const CamStack& c);
void from_json(const nlohmann::json& j, CamStack& c);
void to_json(nlohmann::json& j, const PseudoMaskSet& p);
void from_json(const nlohmann::json& j, PseudoMaskSet& p);
void to_json(nlohmann::json& j, const ProbabilityMap& p);
void from_json(const nlohmann::json& j, ProbabilityMap& p);
void to_json(nlohmann::json& j, const SegmentationMask& m);
void from_json(const nlohmann::json& j, SegmentationMask& m);

}  // namespace tissueseg

#endif  // TISSUESEG_TYPES_HPP_
