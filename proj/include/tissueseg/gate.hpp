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

// Patch inference: segmenter probabilities, closed by the classifier's gate,
// then a per-pixel argmax.

#ifndef TISSUESEG_GATE_HPP_
#define TISSUESEG_GATE_HPP_

#include <cstdint>
#include <vector>

#include "tissueseg/metrics.hpp"
#include "tissueseg/mlps.hpp"
#include "tissueseg/pda.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

inline constexpr double kDefaultGateEpsilon = 0.1;

/// Zeroes channel k wherever class_probs[k] <= epsilon; other channels are
/// copied unchanged and nothing is renormalized. Throws kShapeError when the
/// arity differs, kConfigError when a class probability leaves [0,1], and
/// kAllChannelsClosed when every channel would close.
ProbabilityMap apply_gate(const ProbabilityMap& probs, const std::vector<float>& class_probs,
                          double epsilon);

/// Per-pixel argmax; ties go to the lowest class index.
Grid<std::uint8_t> argmax_labels(const Tensor& probs);

struct GateOptions {
  bool enabled = true;
  double epsilon = kDefaultGateEpsilon;
};

/// apply_gate with the documented fallback: when every channel closes the
/// ungated map is returned, a warning is logged and *fell_back is set.
ProbabilityMap gate_or_fallback(const ProbabilityMap& probs, const std::vector<float>& class_probs,
                                const GateOptions& options, const std::string& patch_id,
                                bool* fell_back = nullptr);

struct PatchSegmentation {
  SegmentationMask mask;
  ProbabilityMap probs;            // after gating
  std::vector<float> class_probs;  // classifier output used by the gate
  bool gate_fallback = false;
};

/// softmax(segmenter) -> gate -> argmax, then the taxonomy's background
/// policy marks near-white pixels invalid. Throws kTaxonomyMismatch when the
/// two models disagree on the class count.
PatchSegmentation segment_patch(const Patch& patch, const Segmenter& segmenter,
                                const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                                const GateOptions& options = {});

}  // namespace tissueseg

#endif  // TISSUESEG_GATE_HPP_
