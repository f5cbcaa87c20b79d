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

// Feature-extractor contract for the classification network. A backbone
// exposes three named taps (b4_3, b5_2, bn7) at non-increasing spatial
// resolution; bn7 is the deepest and feeds the classifier head.

#ifndef TISSUESEG_BACKBONE_HPP_
#define TISSUESEG_BACKBONE_HPP_

#include <map>
#include <random>
#include <string>
#include <vector>

#include "tissueseg/nn.hpp"
#include "tissueseg/tensor.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

/// Smallest accepted input height/width.
inline constexpr int kMinInputExtent = 64;

struct TapSpec {
  std::vector<Tap> taps;  // shallow to deep, ends with bn7
  std::vector<int> strides;
  std::vector<int> channels;

  int stride_of(Tap tap) const;
  int channels_of(Tap tap) const;
  bool has(Tap tap) const;
};

struct FeatureBundle {
  std::map<Tap, Tensor> features;
  const Tensor& at(Tap tap) const { return features.at(tap); }
};

class ClassifierBackbone {
 public:
  /// Per-layer activations recorded by forward(); layout is implementation
  /// defined.
  struct Trace {
    std::vector<Tensor> activations;
  };

  virtual ~ClassifierBackbone() = default;

  virtual const TapSpec& tap_spec() const = 0;
  virtual std::string name() const = 0;
  virtual void initialize(nn::ParameterSet& params, std::mt19937_64& rng) const = 0;

  /// input is a normalized 3 x H x W tensor.
  virtual void forward(const nn::ParameterSet& params, const Tensor& input,
                       Trace& trace) const = 0;
  virtual const Tensor& tap(const Trace& trace, Tap tap) const = 0;

  /// Backpropagates a gradient on the deepest tap. Parameter gradients are
  /// accumulated into grads when non-null; when tap_grads is non-null it
  /// receives the gradient with respect to every tap activation.
  virtual void backward(const nn::ParameterSet& params, const Trace& trace,
                        const Tensor& grad_deepest, nn::Gradients* grads,
                        std::map<Tap, Tensor>* tap_grads) const = 0;

  /// Eval-mode feature extraction at every declared tap. Throws kShapeError
  /// for inputs smaller than kMinInputExtent.
  FeatureBundle extract(const nn::ParameterSet& params, const Tensor& input) const;
  FeatureBundle extract(const nn::ParameterSet& params, const Patch& patch) const;
};

/// Desk-scale reference backbone (~30k parameters). Output stride 8 at all
/// three taps:
///   stem  4x4/4  3->16   relu
///   down  2x2/2  16->32  relu
///   b4_3  3x3    32->32  relu
///   b5_2  3x3 d2 32->48  relu
///   bn7   1x1    48->64  relu
class SmallBackbone final : public ClassifierBackbone {
 public:
  SmallBackbone(nn::ParameterSet& params, const std::string& prefix);

  const TapSpec& tap_spec() const override { return spec_; }
  std::string name() const override { return "small_backbone_v1"; }
  void initialize(nn::ParameterSet& params, std::mt19937_64& rng) const override;
  void forward(const nn::ParameterSet& params, const Tensor& input,
               Trace& trace) const override;
  const Tensor& tap(const Trace& trace, Tap tap) const override;
  void backward(const nn::ParameterSet& params, const Trace& trace,
                const Tensor& grad_deepest, nn::Gradients* grads,
                std::map<Tap, Tensor>* tap_grads) const override;

 private:
  TapSpec spec_;
  std::vector<nn::Conv2d> layers_;
};

}  // namespace tissueseg

#endif  // TISSUESEG_BACKBONE_HPP_
