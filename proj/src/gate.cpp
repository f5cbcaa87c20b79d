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

#include "tissueseg/gate.hpp"

#include <algorithm>

#include "tissueseg/error.hpp"
#include "tissueseg/log.hpp"

namespace tissueseg {

ProbabilityMap apply_gate(const ProbabilityMap& probs, const std::vector<float>& class_probs,
                          double epsilon) {
  const int c = probs.probs.channels();
  if (static_cast<int>(class_probs.size()) != c) {
    throw Error(ErrorCode::kShapeError, "gate has " + std::to_string(class_probs.size()) +
                                            " class probabilities for " + std::to_string(c) +
                                            " channels");
  }
  // Probabilities are single precision, so the threshold is compared at the
  // same precision: a stored 0.1f closes under epsilon = 0.1.
  const float eps = static_cast<float>(epsilon);
  bool any_open = false;
  for (float p : class_probs) {
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw Error(ErrorCode::kConfigError, "class probability outside [0,1]");
    }
    any_open = any_open || p > eps;
  }
  if (!any_open) throw Error(ErrorCode::kAllChannelsClosed, "every class probability <= epsilon");
  ProbabilityMap out = probs;
  for (int k = 0; k < c; ++k) {
    if (class_probs[k] <= eps) {
      auto plane = out.probs.plane(k);
      std::fill(plane.begin(), plane.end(), 0.0f);
    }
  }
  return out;
}

Grid<std::uint8_t> argmax_labels(const Tensor& probs) {
  const int c = probs.channels();
  const std::size_t n = static_cast<std::size_t>(probs.plane_size());
  Grid<std::uint8_t> labels(probs.height(), probs.width(), 0);
  const float* p = probs.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    int best = 0;
    float best_v = p[i];
    for (int k = 1; k < c; ++k) {
      const float v = p[k * n + i];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    labels[i] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

ProbabilityMap gate_or_fallback(const ProbabilityMap& probs, const std::vector<float>& class_probs,
                                const GateOptions& options, const std::string& patch_id,
                                bool* fell_back) {
  if (fell_back != nullptr) *fell_back = false;
  if (!options.enabled) return probs;
  try {
    return apply_gate(probs, class_probs, options.epsilon);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kAllChannelsClosed) throw;
    log_warning("AllChannelsClosed: " + patch_id + " segmented without the gate");
    if (fell_back != nullptr) *fell_back = true;
    return probs;
  }
}

PatchSegmentation segment_patch(const Patch& patch, const Segmenter& segmenter,
                                const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                                const GateOptions& options) {
  const int c = segmenter.num_classes();
  if (classifier.num_classes() != c || taxonomy.num_classes() != c) {
    throw Error(ErrorCode::kTaxonomyMismatch, "segmenter, classifier and taxonomy differ in classes");
  }
  PatchSegmentation out;
  out.class_probs = classifier.predict_probs(patch);
  out.probs = gate_or_fallback(ProbabilityMap::all_valid(segmenter.predict_probs(patch)),
                               out.class_probs, options, patch.patch_id, &out.gate_fallback);
  out.mask.labels = argmax_labels(out.probs.probs);
  out.mask.valid = out.probs.valid;
  apply_background_policy(out.mask, patch, taxonomy.background_policy());
  return out;
}

}  // namespace tissueseg
