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

// Phase-2 segmentation network trained against pseudo masks from several
// classifier taps:
//
//   L = lambda1 * CE(b4_3) + lambda2 * CE(b5_2) + lambda3 * CE(bn7)
//
// where each CE is the mean softmax cross-entropy over valid pixels.

#ifndef TISSUESEG_MLPS_HPP_
#define TISSUESEG_MLPS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/dataset.hpp"
#include "tissueseg/manifest.hpp"
#include "tissueseg/nn.hpp"
#include "tissueseg/train_config.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

struct MlpsLossConfig {
  // Weights for b4_3, b5_2, bn7.
  std::array<double, 3> lambdas{0.2, 0.2, 0.6};

  /// Throws kConfigError on negative weights or when all are zero.
  void validate() const;
  double lambda(Tap tap) const { return lambdas[static_cast<int>(tap)]; }
};

/// Weighted sum of per-tap mean cross-entropies. Mask pixels equal to
/// kInvalidLabel are ignored. When grad is non-null it receives d loss /
/// d logits (same shape as logits). Taps with a zero weight are skipped and
/// need not be present. Throws kShapeError on size mismatch or a label
/// outside [0, c), kEmptyValidRegion when a weighted tap has no valid pixel,
/// kMissingPseudoMask when a weighted tap is absent.
double mlps_loss(const Tensor& logits, const PseudoMaskSet& pseudo, const MlpsLossConfig& cfg,
                 Tensor* grad = nullptr);

/// Encoder-decoder segmentation network producing c logits at input
/// resolution. Any input of at least kMinInputExtent pixels per side works.
class Segmenter {
 public:
  struct Trace {
    std::vector<Tensor> acts;  // encoder and decoder activations
    int in_h = 0;
    int in_w = 0;
  };

  explicit Segmenter(int num_classes);
  Segmenter(const Segmenter&) = delete;
  Segmenter& operator=(const Segmenter&) = delete;

  void initialize(std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  NormalizationStats& normalization() { return norm_; }
  const NormalizationStats& normalization() const { return norm_; }

  /// input must already be normalized. Returns c x H x W logits.
  Tensor forward(const Tensor& input, Trace& trace) const;
  void backward(const Trace& trace, const Tensor& grad_logits, nn::Gradients& grads) const;

  /// Softmax probabilities for a raw [0,1] patch.
  Tensor predict_probs(const Patch& patch) const;

  void save(const std::filesystem::path& dir, const TissueTaxonomy& taxonomy,
            nlohmann::json extra = nlohmann::json::object()) const;
  static std::unique_ptr<Segmenter> load(const std::filesystem::path& dir,
                                         TissueTaxonomy* taxonomy = nullptr);

 private:
  int num_classes_;
  nn::ParameterSet params_;
  std::vector<nn::Conv2d> enc_;
  nn::Conv2d fuse_;
  nn::Conv2d cls_;
  NormalizationStats norm_;
};

/// One training example: the image and its target masks.
struct Phase2Sample {
  Patch patch;
  PseudoMaskSet targets;
};

/// Loads every training record with its stored pseudo masks for the taps
/// that carry weight. Throws kMissingPseudoMask when one is absent.
std::vector<Phase2Sample> load_phase2_samples(const Manifest& manifest,
                                              const std::filesystem::path& pseudo_dir,
                                              const MlpsLossConfig& loss);

/// Wraps a ground-truth mask as a single-tap (bn7) target for the fully
/// supervised mode; invalid pixels become kInvalidLabel.
PseudoMaskSet supervised_targets(const SegmentationMask& mask, const std::string& patch_id);

/// Applies one augmentation draw to an image and all of its masks: flips go
/// to both, blur only to the image.
void augment_pair(const AugmentDraw& draw, const AugmentConfig& cfg, Tensor& image,
                  PseudoMaskSet& targets);

struct Phase2EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

void to_json(nlohmann::json& j, const Phase2EpochLog& log);

/// Trains the segmenter in place with the loss weights in config.lambdas.
std::vector<Phase2EpochLog> train_phase2(
    Segmenter& model, const std::vector<Phase2Sample>& train, const TrainConfig& config,
    const std::function<void(const Phase2EpochLog&)>& on_epoch = {});

}  // namespace tissueseg

#endif  // TISSUESEG_MLPS_HPP_
