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

#include "tissueseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "tissueseg/error.hpp"

namespace tissueseg::nn {

int ParameterSet::add(std::string name, std::vector<int> shape, bool decay) {
  if (index_of(name) >= 0) {
    throw Error(ErrorCode::kConfigError, "duplicate parameter " + name);
  }
  const std::size_t count = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                            std::multiplies<>());
  params_.push_back({std::move(name), std::move(shape), std::vector<float>(count, 0.0f), decay});
  return static_cast<int>(params_.size()) - 1;
}

int ParameterSet::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return -1;
}

Gradients::Gradients(const ParameterSet& params) {
  buffers_.reserve(params.size());
  for (const auto& p : params.all()) buffers_.emplace_back(p.value.size(), 0.0f);
}

void Gradients::zero() {
  for (auto& b : buffers_) std::fill(b.begin(), b.end(), 0.0f);
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    auto& dst = buffers_[i];
    const auto& src = other.buffers_[i];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

double Gradients::norm() const {
  double acc = 0.0;
  for (const auto& b : buffers_) {
    for (float v : b) acc += static_cast<double>(v) * v;
  }
  return std::sqrt(acc);
}

void Gradients::scale(float factor) {
  for (auto& b : buffers_) {
    for (auto& v : b) v *= factor;
  }
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name,
               kernels::ConvGeometry geom, bool with_bias)
    : geom_(geom) {
  weight_ = params.add(name + ".weight",
                       {geom.out_channels, geom.in_channels, geom.kernel, geom.kernel});
  if (with_bias) bias_ = params.add(name + ".bias", {geom.out_channels}, false);
}

void Conv2d::initialize(ParameterSet& params, std::mt19937_64& rng) const {
  const double fan_in = static_cast<double>(geom_.in_channels) * geom_.kernel * geom_.kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& w : params[weight_].value) w = static_cast<float>(dist(rng));
  if (bias_ >= 0) std::fill(params[bias_].value.begin(), params[bias_].value.end(), 0.0f);
}

void Conv2d::forward(const ParameterSet& params, const Tensor& input,
                     Tensor& output) const {
  kernels::conv2d_forward(geom_, params.view(weight_),
                          bias_ >= 0 ? params.view(bias_) : std::span<const float>{},
                          input, output);
}

void Conv2d::backward(const ParameterSet& params, const Tensor& input,
                      const Tensor& grad_output, Tensor* grad_input,
                      Gradients& grads) const {
  kernels::conv2d_backward(geom_, params.view(weight_), input, grad_output,
                           grad_input, grads[weight_],
                           bias_ >= 0 ? grads[bias_] : std::span<float>{});
}

double poly_lr(double lr0, long iter, long total_iters, double power) {
  if (total_iters <= 0) return lr0;
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total_iters);
  return lr0 * std::pow(std::max(frac, 0.0), power);
}

SgdMomentum::SgdMomentum(const ParameterSet& params, double momentum,
                         double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params.all()) velocity_.emplace_back(p.value.size(), 0.0f);
}

void SgdMomentum::step(ParameterSet& params, const Gradients& grads, double lr) {
  const float mom = static_cast<float>(momentum_);
  const float rate = static_cast<float>(lr);
  for (int i = 0; i < params.size(); ++i) {
    auto& value = params[i].value;
    auto& vel = velocity_[i];
    const auto g = grads[i];
    const float wd = params[i].decay ? static_cast<float>(weight_decay_) : 0.0f;
    for (std::size_t j = 0; j < value.size(); ++j) {
      vel[j] = mom * vel[j] + g[j] + wd * value[j];
      value[j] -= rate * vel[j];
    }
  }
}

void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params,
                     nlohmann::json metadata) {
  std::filesystem::create_directories(dir);
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : params.all()) {
    const auto file = p.name + ".bin";
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(float)));
    table.push_back({{"name", p.name}, {"shape", p.shape}, {"file", file}});
  }
  metadata["parameters"] = table;
  std::ofstream meta(dir / "metadata.json");
  meta << metadata.dump(2) << "\n";
}

nlohmann::json load_checkpoint(const std::filesystem::path& dir, ParameterSet& params) {
  std::ifstream meta(dir / "metadata.json");
  if (!meta) throw Error(ErrorCode::kMissingFile, (dir / "metadata.json").string());
  nlohmann::json metadata = nlohmann::json::parse(meta);
  for (int i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto file = dir / (p.name + ".bin");
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw Error(ErrorCode::kConfigError, "checkpoint lacks parameter " + p.name);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != p.value.size() * sizeof(float)) {
      throw Error(ErrorCode::kConfigError, "parameter " + p.name + " has wrong size");
    }
    in.seekg(0);
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(bytes));
  }
  return metadata;
}

}  // namespace tissueseg::nn
