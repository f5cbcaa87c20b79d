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

// Grad-CAM localization maps and the pseudo masks derived from them.

#ifndef TISSUESEG_PSEUDOMASK_HPP_
#define TISSUESEG_PSEUDOMASK_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tissueseg/manifest.hpp"
#include "tissueseg/pda.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

struct GradCamConfig {
  std::vector<Tap> taps{kAllTaps.begin(), kAllTaps.end()};
  bool relu_on_map = true;
  // Probability above which a class counts as predicted present when no
  // ground-truth label is available.
  double present_class_threshold = 0.5;
  // Dropout coefficient of the head while maps are computed; 1 disables
  // deactivation.
  double mu = 1.0;
};

/// Grad-CAM from one tap activation and the per-class gradients of the class
/// logits with respect to it: alpha_k[ch] = mean(grad_k[ch]),
/// map_k = ReLU(sum_ch alpha_k[ch] * act[ch]), then each map is divided by
/// its maximum (all-zero maps stay zero).
CamStack grad_cam_from_gradients(const Tensor& activation,
                                 const std::vector<Tensor>& class_grads, Tap tap,
                                 bool relu_on_map = true);

/// Runs the classifier in eval mode and returns normalized Grad-CAM maps at
/// every requested tap. Throws kNumericalError on non-finite gradients.
std::map<Tap, CamStack> grad_cam(const PdaClassifier& model, const Patch& patch,
                                 const GradCamConfig& config = {});
CamStack grad_cam(const PdaClassifier& model, const Patch& patch, Tap tap);

/// Upsamples the maps of the present classes to height x width and takes the
/// per-pixel argmax among them (lowest index wins ties). Throws kEmptyLabel
/// when no class is present.
Grid<std::uint8_t> masks_from_cams(const CamStack& cams, const PatchLabel& present, int height,
                                   int width);

/// All taps for one patch.
PseudoMaskSet pseudo_masks(const PdaClassifier& model, const Patch& patch,
                           const PatchLabel& present, const GradCamConfig& config = {});

/// Classes predicted present (sigmoid > threshold); falls back to the single
/// most probable class when none clears the threshold.
PatchLabel predicted_label(const std::vector<float>& probs, double threshold);

struct QuarantineEntry {
  std::string patch_id;
  std::string reason;
};

struct PseudoMaskReport {
  int patches = 0;
  int files_written = 0;
  int files_skipped = 0;
  std::vector<QuarantineEntry> quarantined;
};

std::filesystem::path pseudo_mask_path(const std::filesystem::path& out_dir, Tap tap,
                                       const std::string& patch_id);

/// Generates masks for every training record of the manifest, writing
/// <out>/<tap>/<patch_id>.png, <out>/index.jsonl and
/// <out>/quarantine.jsonl. Existing mask files are kept, so an interrupted
/// run can be resumed. Per-patch failures are quarantined, not fatal.
PseudoMaskReport generate_dataset(const Manifest& manifest, const PdaClassifier& model,
                                  const std::filesystem::path& out_dir,
                                  const GradCamConfig& config = {});

/// Loads the stored masks of one patch. Throws kMissingPseudoMask when any
/// requested tap is absent.
PseudoMaskSet load_pseudo_masks(const std::filesystem::path& out_dir, const std::string& patch_id,
                                const std::vector<Tap>& taps = {kAllTaps.begin(), kAllTaps.end()});

}  // namespace tissueseg

#endif  // TISSUESEG_PSEUDOMASK_HPP_
