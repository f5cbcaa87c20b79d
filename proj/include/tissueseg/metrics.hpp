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

// Confusion matrices and the IoU family of segmentation scores.

#ifndef TISSUESEG_METRICS_HPP_
#define TISSUESEG_METRICS_HPP_

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

inline constexpr double kDefaultWhiteThreshold = 0.85;

/// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes)
      : num_classes_(num_classes),
        counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}
  ConfusionMatrix(int num_classes, std::vector<std::int64_t> counts);

  int num_classes() const { return num_classes_; }
  std::int64_t& at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  std::int64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  const std::vector<std::int64_t>& counts() const { return counts_; }

  std::int64_t total() const;
  std::int64_t row_sum(int k) const;
  std::int64_t col_sum(int k) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int num_classes_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Counts pixels valid in both masks. Throws kShapeError on size mismatch and
/// kTaxonomyMismatch when a valid label is outside [0, num_classes). Logs an
/// EmptyEvaluation warning when no pixel is valid in both.
ConfusionMatrix confusion(const SegmentationMask& gt, const SegmentationMask& pred,
                          int num_classes);

/// Same, after checking that both sides use one taxonomy.
ConfusionMatrix confusion(const SegmentationMask& gt, const TissueTaxonomy& gt_taxonomy,
                          const SegmentationMask& pred, const TissueTaxonomy& pred_taxonomy);

struct Scores {
  std::vector<double> iou_per_class;  // NaN for classes absent from gt and pred
  std::vector<std::uint8_t> class_evaluated;
  double miou = 0.0;
  double fwiou = 0.0;
  double acc = 0.0;
  std::int64_t pixels_evaluated = 0;
};

/// Throws kEmptyEvaluation when the matrix is empty.
Scores scores(const ConfusionMatrix& cm);

void to_json(nlohmann::json& j, const Scores& s);

/// 1 = valid tissue, 0 = near-white background (min(R,G,B) > threshold).
Grid<std::uint8_t> white_background_mask(const Patch& patch,
                                         double threshold = kDefaultWhiteThreshold);

/// Applies the taxonomy's background policy to a mask in place.
void apply_background_policy(SegmentationMask& mask, const Patch& patch,
                             BackgroundPolicy policy, double threshold = kDefaultWhiteThreshold);

namespace reference {

/// Serial single loop, kept as the oracle for the parallel version.
ConfusionMatrix confusion(const SegmentationMask& gt, const SegmentationMask& pred,
                          int num_classes);

}  // namespace reference

}  // namespace tissueseg

#endif  // TISSUESEG_METRICS_HPP_
