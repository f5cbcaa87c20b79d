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

// Minimal training plumbing: named parameters, gradient buffers, a
// convolution layer bound to a parameter set, SGD with momentum, and the
// on-disk checkpoint format.

#ifndef TISSUESEG_NN_HPP_
#define TISSUESEG_NN_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/kernels.hpp"
#include "tissueseg/tensor.hpp"

namespace tissueseg::nn {

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  bool decay = true;  // weight decay applies
};

class ParameterSet {
 public:
  /// Returns the index of the new parameter. Names must be unique.
  int add(std::string name, std::vector<int> shape, bool decay = true);

  int size() const { return static_cast<int>(params_.size()); }
  Parameter& operator[](int i) { return params_[i]; }
  const Parameter& operator[](int i) const { return params_[i]; }
  int index_of(const std::string& name) const;  // -1 when absent

  std::span<const float> view(int i) const { return params_[i].value; }
  std::span<float> view(int i) { return params_[i].value; }

  const std::vector<Parameter>& all() const { return params_; }

 private:
  std::vector<Parameter> params_;
};

/// Gradient buffers shaped like a ParameterSet.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::span<float> operator[](int i) { return buffers_[i]; }
  std::span<const float> operator[](int i) const { return buffers_[i]; }
  int size() const { return static_cast<int>(buffers_.size()); }

  void zero();
  void add(const Gradients& other);
  void scale(float factor);
  double norm() const;

 private:
  std::vector<std::vector<float>> buffers_;
};

/// Convolution whose weight and bias live in a ParameterSet.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name,
         kernels::ConvGeometry geom, bool with_bias = true);

  const kernels::ConvGeometry& geometry() const { return geom_; }

  /// He-normal weights, zero bias.
  void initialize(ParameterSet& params, std::mt19937_64& rng) const;

  void forward(const ParameterSet& params, const Tensor& input, Tensor& output) const;
  void backward(const ParameterSet& params, const Tensor& input,
                const Tensor& grad_output, Tensor* grad_input,
                Gradients& grads) const;

 private:
  kernels::ConvGeometry geom_;
  int weight_ = -1;
  int bias_ = -1;
};

/// Polynomial decay: lr0 * (1 - iter / total)^power.
double poly_lr(double lr0, long iter, long total_iters, double power);

class SgdMomentum {
 public:
  SgdMomentum(const ParameterSet& params, double momentum, double weight_decay);

  void step(ParameterSet& params, const Gradients& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<float>> velocity_;
};

/// Writes metadata.json (with a "parameters" table) plus one raw
/// little-endian float32 blob per parameter, named <parameter name>.bin.
void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params,
                     nlohmann::json metadata);

/// Loads blobs into an already-constructed ParameterSet; returns metadata.
/// Throws kConfigError on missing or mis-shaped parameters.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, ParameterSet& params);

}  // namespace tissueseg::nn

#endif  // TISSUESEG_NN_HPP_
