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

#include "tissueseg/backbone.hpp"

#include <algorithm>

#include "tissueseg/error.hpp"
#include "tissueseg/kernels.hpp"

namespace tissueseg {

int TapSpec::stride_of(Tap tap) const {
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] == tap) return strides[i];
  }
  throw Error(ErrorCode::kConfigError, "tap not declared: " + std::string(tap_name(tap)));
}

int TapSpec::channels_of(Tap tap) const {
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] == tap) return channels[i];
  }
  throw Error(ErrorCode::kConfigError, "tap not declared: " + std::string(tap_name(tap)));
}

bool TapSpec::has(Tap tap) const {
  return std::find(taps.begin(), taps.end(), tap) != taps.end();
}

FeatureBundle ClassifierBackbone::extract(const nn::ParameterSet& params,
                                          const Tensor& input) const {
  if (input.channels() != 3) throw Error(ErrorCode::kShapeError, "expected RGB input");
  if (input.height() < kMinInputExtent || input.width() < kMinInputExtent) {
    throw Error(ErrorCode::kShapeError,
                "input " + std::to_string(input.height()) + "x" + std::to_string(input.width()) +
                    " smaller than " + std::to_string(kMinInputExtent));
  }
  Trace trace;
  forward(params, input, trace);
  FeatureBundle bundle;
  for (Tap t : tap_spec().taps) bundle.features[t] = tap(trace, t);
  return bundle;
}

FeatureBundle ClassifierBackbone::extract(const nn::ParameterSet& params,
                                          const Patch& patch) const {
  return extract(params, patch.pixels);
}

namespace {
// Layer index whose output is each tap.
constexpr int kB4_3Layer = 2;
constexpr int kB5_2Layer = 3;
constexpr int kBn7Layer = 4;

int layer_of(Tap tap) {
  switch (tap) {
    case Tap::kB4_3: return kB4_3Layer;
    case Tap::kB5_2: return kB5_2Layer;
    case Tap::kBn7: return kBn7Layer;
  }
  return kBn7Layer;
}
}  // namespace

SmallBackbone::SmallBackbone(nn::ParameterSet& params, const std::string& prefix) {
  using kernels::ConvGeometry;
  layers_.emplace_back(params, prefix + "stem", ConvGeometry{3, 16, 4, 4, 0, 1});
  layers_.emplace_back(params, prefix + "down", ConvGeometry{16, 32, 2, 2, 0, 1});
  layers_.emplace_back(params, prefix + "b4_3", ConvGeometry{32, 32, 3, 1, 1, 1});
  layers_.emplace_back(params, prefix + "b5_2", ConvGeometry{32, 48, 3, 1, 2, 2});
  layers_.emplace_back(params, prefix + "bn7", ConvGeometry{48, 64, 1, 1, 0, 1});
  spec_.taps = {Tap::kB4_3, Tap::kB5_2, Tap::kBn7};
  spec_.strides = {8, 8, 8};
  spec_.channels = {32, 48, 64};
}

void SmallBackbone::initialize(nn::ParameterSet& params, std::mt19937_64& rng) const {
  for (const auto& layer : layers_) layer.initialize(params, rng);
}

void SmallBackbone::forward(const nn::ParameterSet& params, const Tensor& input,
                            Trace& trace) const {
  trace.activations.resize(layers_.size() + 1);
  trace.activations[0] = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].forward(params, trace.activations[i], trace.activations[i + 1]);
    kernels::relu_inplace(trace.activations[i + 1]);
  }
}

const Tensor& SmallBackbone::tap(const Trace& trace, Tap t) const {
  return trace.activations.at(layer_of(t) + 1);
}

void SmallBackbone::backward(const nn::ParameterSet& params, const Trace& trace,
                             const Tensor& grad_deepest, nn::Gradients* grads,
                             std::map<Tap, Tensor>* tap_grads) const {
  // When only tap gradients are wanted, stop once the shallowest tap is done.
  const int stop = grads != nullptr ? 0 : kB4_3Layer;
  nn::Gradients scratch;
  if (grads == nullptr) scratch = nn::Gradients(params);
  nn::Gradients& sink = grads != nullptr ? *grads : scratch;

  Tensor grad = grad_deepest;
  Tensor grad_in;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= stop; --i) {
    if (tap_grads != nullptr) {
      if (i == kBn7Layer) (*tap_grads)[Tap::kBn7] = grad;
      if (i == kB5_2Layer) (*tap_grads)[Tap::kB5_2] = grad;
      if (i == kB4_3Layer) (*tap_grads)[Tap::kB4_3] = grad;
    }
    kernels::relu_backward(trace.activations[i + 1], grad);
    layers_[i].backward(params, trace.activations[i], grad, i > 0 ? &grad_in : nullptr, sink);
    if (i > 0) std::swap(grad, grad_in);
  }
}

}  // namespace tissueseg
