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

// Phase-1 multi-label classifier with progressive dropout attention.
//
// Forward pass of the head on deep features m (channels x h x w):
//
//   M_k   = sum_ch w[k,ch] * m[ch]              class activation maps
//   beta_k = mu * max(M_k)
//   M^_k  = M_k where M_k <= beta_k, else 0     deactivation
//   A     = (1/c) * sum_k M^_k                  attention map
//   m~    = A * m                               broadcast over channels
//   y_k   = w[k] . GAP(m~) + b_k
//
// mu follows a per-epoch schedule: 1 during warmup, then
// mu <- sigma * mu, clamped to the lower bound.

#ifndef TISSUESEG_PDA_HPP_
#define TISSUESEG_PDA_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/backbone.hpp"
#include "tissueseg/dataset.hpp"
#include "tissueseg/nn.hpp"
#include "tissueseg/train_config.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

struct PdaSchedule {
  double sigma = 0.985;
  double lower_bound = 0.65;
  int warmup_epochs = 3;
  double mu = 1.0;

  friend bool operator==(const PdaSchedule&, const PdaSchedule&) = default;
};

/// Advances the schedule to `epoch` (0-based, called once per epoch in
/// increasing order).
PdaSchedule step_schedule(PdaSchedule sched, int epoch);

struct ClassifierHead {
  int num_classes = 0;
  int channels = 0;
  std::vector<float> weights;  // num_classes x channels
  std::vector<float> bias;     // num_classes

  float weight(int k, int ch) const {
    return weights[static_cast<std::size_t>(k) * channels + ch];
  }
};

/// M_k(i,j) = sum_ch w[k,ch] * m[ch,i,j]. Throws kShapeError on channel
/// mismatch.
CamStack class_activation_maps(const Tensor& features, const ClassifierHead& head,
                               Tap tap = Tap::kBn7);

struct DeactivatedCams {
  CamStack cams;                      // M^_k
  Grid<float> attention;              // A
  std::vector<float> cutoffs;         // beta_k
  std::vector<std::uint8_t> keep;     // c x h x w, 1 where M_k <= beta_k
};

/// Zeroes every CAM value above mu * max(M_k) and averages the result.
DeactivatedCams dropout_deactivate(const CamStack& cams, double mu);

/// A = (1/c) * sum_k M_k on raw maps (the mu = 1 composition written out).
Grid<float> mean_attention(const CamStack& cams);

/// m~[ch,i,j] = A(i,j) * m[ch,i,j].
Tensor apply_attention(const Tensor& features, const Grid<float>& attention);

/// Global average pooling per channel.
std::vector<float> global_average_pool(const Tensor& features);

/// Logits = W * GAP(m~) + b.
std::vector<float> predict_logits(const Tensor& attended, const ClassifierHead& head);

std::vector<float> sigmoid(std::span<const float> logits);

/// Mean over classes of binary cross-entropy on logits. Writes d loss /
/// d logits into grad when non-null.
double multilabel_soft_margin_loss(std::span<const float> logits, const PatchLabel& label,
                                   std::vector<float>* grad);

/// How the head combines features before pooling.
enum class HeadMode {
  kDropoutAttention,  // CAM -> deactivation(mu) -> A -> A*m
  kMeanAttention,     // A = mean of raw CAMs, no deactivation step
  kPlain,             // no attention: GAP(m) directly
};

class PdaClassifier {
 public:
  /// Everything a forward pass records for backward.
  struct Pass {
    ClassifierBackbone::Trace trace;
    HeadMode mode = HeadMode::kDropoutAttention;
    CamStack cams;
    DeactivatedCams dropout;
    Grid<float> attention;
    Tensor attended;
    std::vector<float> pooled;
    std::vector<float> logits;
  };

  PdaClassifier(int num_classes, bool attention = true);
  PdaClassifier(const PdaClassifier&) = delete;
  PdaClassifier& operator=(const PdaClassifier&) = delete;

  void initialize(std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  bool uses_attention() const { return attention_; }
  const ClassifierBackbone& backbone() const { return *backbone_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  ClassifierHead head() const;
  void set_head(const ClassifierHead& head);

  NormalizationStats& normalization() { return norm_; }
  const NormalizationStats& normalization() const { return norm_; }
  PdaSchedule& schedule() { return schedule_; }
  const PdaSchedule& schedule() const { return schedule_; }

  /// Head mode used at evaluation time.
  HeadMode eval_mode() const {
    return attention_ ? HeadMode::kDropoutAttention : HeadMode::kPlain;
  }

  /// input must already be normalized.
  void forward(const Tensor& input, double mu, HeadMode mode, Pass& pass) const;

  /// Backpropagates d loss / d logits. Parameter gradients accumulate into
  /// grads (may be null); tap_grads receives per-tap activation gradients.
  void backward(const Pass& pass, std::span<const float> grad_logits,
                nn::Gradients* grads, std::map<Tap, Tensor>* tap_grads) const;

  /// Per-class sigmoid probabilities for a raw [0,1] patch. The head runs
  /// with the coefficient reached at the end of training (schedule().mu),
  /// so predictions see the same deactivation the head was fitted under.
  std::vector<float> predict_probs(const Patch& patch) const;

  void save(const std::filesystem::path& dir, const TissueTaxonomy& taxonomy,
            nlohmann::json extra = nlohmann::json::object()) const;
  static std::unique_ptr<PdaClassifier> load(const std::filesystem::path& dir,
                                             TissueTaxonomy* taxonomy = nullptr);

 private:
  int num_classes_;
  bool attention_;
  nn::ParameterSet params_;
  std::unique_ptr<ClassifierBackbone> backbone_;
  int head_weight_ = -1;
  int head_bias_ = -1;
  NormalizationStats norm_;
  PdaSchedule schedule_;
};

struct Phase1EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double mu = 1.0;
  std::vector<double> acc_per_class;
  double acc_exact = 0.0;
};

void to_json(nlohmann::json& j, const Phase1EpochLog& log);

/// Trains the classifier in place. Normalization statistics are computed
/// from `train` unless config.aug.normalize is false. The callback, when
/// set, sees every epoch log as it is produced.
std::vector<Phase1EpochLog> train_phase1(
    PdaClassifier& model, const std::vector<Sample>& train, const TrainConfig& config,
    const std::function<void(const Phase1EpochLog&)>& on_epoch = {});

/// Patch-level accuracy at threshold 0.5: {per-class..., exact match}.
struct ClassificationAccuracy {
  std::vector<double> per_class;
  double mean_per_class = 0.0;
  double exact = 0.0;
};
ClassificationAccuracy evaluate_classifier(const PdaClassifier& model,
                                           const std::vector<Sample>& samples);

}  // namespace tissueseg

#endif  // TISSUESEG_PDA_HPP_
