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

#include "tissueseg/pseudomask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>

#include "tissueseg/error.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/kernels.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

CamStack grad_cam_from_gradients(const Tensor& activation, const std::vector<Tensor>& class_grads,
                                 Tap tap, bool relu_on_map) {
  const int c = static_cast<int>(class_grads.size());
  const int channels = activation.channels();
  const int n = activation.plane_size();
  CamStack out;
  out.tap = tap;
  out.maps = Tensor(c, activation.height(), activation.width());
  for (int k = 0; k < c; ++k) {
    const Tensor& g = class_grads[k];
    if (!g.same_shape(activation)) {
      throw Error(ErrorCode::kShapeError, "gradient shape differs from tap activation");
    }
    float* map = out.maps.plane(k).data();
    for (int ch = 0; ch < channels; ++ch) {
      double acc = 0.0;
      for (float v : g.plane(ch)) acc += v;
      const float alpha = static_cast<float>(acc / n);
      if (!std::isfinite(alpha)) {
        throw Error(ErrorCode::kNumericalError, "non-finite Grad-CAM weight");
      }
      const float* a = activation.plane(ch).data();
      for (int i = 0; i < n; ++i) map[i] += alpha * a[i];
    }
    float mx = 0.0f;
    for (int i = 0; i < n; ++i) {
      if (relu_on_map) map[i] = std::max(map[i], 0.0f);
      mx = std::max(mx, map[i]);
    }
    if (mx > 0.0f) {
      for (int i = 0; i < n; ++i) map[i] /= mx;
    }
  }
  return out;
}

std::map<Tap, CamStack> grad_cam(const PdaClassifier& model, const Patch& patch,
                                 const GradCamConfig& config) {
  const int c = model.num_classes();
  for (Tap tap : config.taps) {
    if (!model.backbone().tap_spec().has(tap)) {
      throw Error(ErrorCode::kConfigError, "tap " + std::string(tap_name(tap)) + " not declared");
    }
  }
  PdaClassifier::Pass pass;
  model.forward(model.normalization().apply(patch.pixels), config.mu, model.eval_mode(), pass);

  std::map<Tap, std::vector<Tensor>> grads;
  std::vector<float> onehot(c, 0.0f);
  for (int k = 0; k < c; ++k) {
    std::fill(onehot.begin(), onehot.end(), 0.0f);
    onehot[k] = 1.0f;
    std::map<Tap, Tensor> tap_grads;
    model.backward(pass, onehot, nullptr, &tap_grads);
    for (Tap tap : config.taps) grads[tap].push_back(std::move(tap_grads.at(tap)));
  }
  std::map<Tap, CamStack> out;
  for (Tap tap : config.taps) {
    out[tap] = grad_cam_from_gradients(model.backbone().tap(pass.trace, tap), grads[tap], tap,
                                       config.relu_on_map);
  }
  return out;
}

CamStack grad_cam(const PdaClassifier& model, const Patch& patch, Tap tap) {
  GradCamConfig config;
  config.taps = {tap};
  return std::move(grad_cam(model, patch, config).at(tap));
}

Grid<std::uint8_t> masks_from_cams(const CamStack& cams, const PatchLabel& present, int height,
                                   int width) {
  const int c = cams.maps.channels();
  if (present.num_classes() != c) {
    throw Error(ErrorCode::kShapeError, "label arity differs from CAM count");
  }
  std::vector<int> competitors;
  for (int k = 0; k < c; ++k) {
    if (present.is_present(k)) competitors.push_back(k);
  }
  if (competitors.empty()) throw Error(ErrorCode::kEmptyLabel, "no class present");

  Grid<std::uint8_t> mask(height, width, static_cast<std::uint8_t>(competitors[0]));
  if (competitors.size() == 1) return mask;

  Tensor selected(static_cast<int>(competitors.size()), cams.maps.height(), cams.maps.width());
  for (std::size_t i = 0; i < competitors.size(); ++i) {
    auto src = cams.maps.plane(competitors[i]);
    std::copy(src.begin(), src.end(), selected.plane(static_cast<int>(i)).begin());
  }
  Tensor up;
  kernels::resize_bilinear(selected, height, width, up);
  const int n = height * width;
  for (int p = 0; p < n; ++p) {
    std::size_t best = 0;
    float best_v = up.data()[p];
    for (std::size_t i = 1; i < competitors.size(); ++i) {
      const float v = up.data()[i * n + p];
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    mask[p] = static_cast<std::uint8_t>(competitors[best]);
  }
  return mask;
}

PseudoMaskSet pseudo_masks(const PdaClassifier& model, const Patch& patch,
                           const PatchLabel& present, const GradCamConfig& config) {
  PseudoMaskSet out;
  out.patch_id = patch.patch_id;
  for (auto& [tap, cams] : grad_cam(model, patch, config)) {
    out.masks[tap] = masks_from_cams(cams, present, patch.height(), patch.width());
  }
  return out;
}

PatchLabel predicted_label(const std::vector<float>& probs, double threshold) {
  PatchLabel label;
  label.presence.assign(probs.size(), 0);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    label.presence[k] = probs[k] > threshold ? 1 : 0;
  }
  if (label.count_present() == 0 && !probs.empty()) {
    label.presence[std::max_element(probs.begin(), probs.end()) - probs.begin()] = 1;
  }
  return label;
}

fs::path pseudo_mask_path(const fs::path& out_dir, Tap tap, const std::string& patch_id) {
  return out_dir / std::string(tap_name(tap)) / (patch_id + ".png");
}

PseudoMaskReport generate_dataset(const Manifest& manifest, const PdaClassifier& model,
                                  const fs::path& out_dir, const GradCamConfig& config) {
  const auto records = manifest.split("train");
  for (Tap tap : config.taps) fs::create_directories(out_dir / std::string(tap_name(tap)));
  const int c = model.num_classes();

  struct Outcome {
    std::vector<nlohmann::json> index;
    int written = 0;
    int skipped = 0;
    std::string error;
  };
  std::vector<Outcome> outcomes(records.size());

  parallel_for(records.size(), [&](std::size_t i) {
    const ManifestRecord& r = *records[i];
    Outcome& o = outcomes[i];
    try {
      std::vector<Tap> missing;
      for (Tap tap : config.taps) {
        if (!fs::exists(pseudo_mask_path(out_dir, tap, r.patch_id))) missing.push_back(tap);
      }
      std::map<Tap, Grid<std::uint8_t>> masks;
      if (!missing.empty()) {
        if (static_cast<int>(r.label.size()) != c) {
          throw Error(ErrorCode::kLabelArityMismatch, "label arity differs from model");
        }
        const Patch patch = load_patch(r.path, r.patch_id, r.slide_id, r.origin);
        GradCamConfig sub = config;
        sub.taps = missing;
        PseudoMaskSet set = pseudo_masks(model, patch, r.patch_label(), sub);
        for (Tap tap : missing) {
          write_gray_png(pseudo_mask_path(out_dir, tap, r.patch_id), set.masks.at(tap));
          ++o.written;
        }
        masks = std::move(set.masks);
      }
      for (Tap tap : config.taps) {
        const fs::path path = pseudo_mask_path(out_dir, tap, r.patch_id);
        if (!masks.count(tap)) {
          masks[tap] = read_gray_png(path);
          ++o.skipped;
        }
        SegmentationMask as_mask;
        as_mask.labels = masks[tap];
        as_mask.valid = Grid<std::uint8_t>(as_mask.labels.height(), as_mask.labels.width(), 1);
        o.index.push_back({{"patch_id", r.patch_id},
                           {"tap", tap_name(tap)},
                           {"path", fs::relative(path, out_dir).string()},
                           {"classes_present", classes_present(as_mask, c)}});
      }
    } catch (const std::exception& e) {
      o.error = e.what();
      o.index.clear();
    }
  });

  PseudoMaskReport report;
  report.patches = static_cast<int>(records.size());
  std::ofstream index(out_dir / "index.jsonl");
  std::ofstream quarantine(out_dir / "quarantine.jsonl");
  if (!index || !quarantine) throw Error(ErrorCode::kIoError, "cannot write into " + out_dir.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Outcome& o = outcomes[i];
    report.files_written += o.written;
    report.files_skipped += o.skipped;
    if (!o.error.empty()) {
      report.quarantined.push_back({records[i]->patch_id, o.error});
      quarantine << nlohmann::json{{"patch_id", records[i]->patch_id}, {"reason", o.error}}.dump()
                 << "\n";
      continue;
    }
    for (const auto& line : o.index) index << line.dump() << "\n";
  }
  return report;
}

PseudoMaskSet load_pseudo_masks(const fs::path& out_dir, const std::string& patch_id,
                                const std::vector<Tap>& taps) {
  PseudoMaskSet out;
  out.patch_id = patch_id;
  for (Tap tap : taps) {
    const fs::path path = pseudo_mask_path(out_dir, tap, patch_id);
    if (!fs::exists(path)) {
      throw Error(ErrorCode::kMissingPseudoMask,
                  "no " + std::string(tap_name(tap)) + " mask for " + patch_id);
    }
    out.masks[tap] = read_gray_png(path);
  }
  return out;
}

}  // namespace tissueseg
