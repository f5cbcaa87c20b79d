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

// Dense numeric kernels used by the networks.
//
// The functions in `tissueseg::kernels` are the production path: convolution
// lowers to im2col + SGEMM, and the per-channel / per-row loops are
// OpenMP-parallel. `tissueseg::kernels::reference` holds straightforward
// serial loops with the same contracts; tests compare the two and the
// benchmark target times them against each other.
//
// Backward kernels accumulate into parameter gradients (+=) and overwrite
// input gradients.

#ifndef TISSUESEG_KERNELS_HPP_
#define TISSUESEG_KERNELS_HPP_

#include <cstddef>
#include <span>

#include "tissueseg/tensor.hpp"

namespace tissueseg::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  int out_extent(int in) const {
    return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
  }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
  bool is_pointwise() const {
    return kernel == 1 && stride == 1 && pad == 0;
  }
};

/// Pins the BLAS backend to one thread; parallelism comes from OpenMP.
void init_threading();

/// output is resized to out_channels x out_h x out_w. bias may be empty.
void conv2d_forward(const ConvGeometry& geom, std::span<const float> weight,
                    std::span<const float> bias, const Tensor& input,
                    Tensor& output);

/// grad_input may be null when the input gradient is not needed.
void conv2d_backward(const ConvGeometry& geom, std::span<const float> weight,
                     const Tensor& input, const Tensor& grad_output,
                     Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);

void relu_inplace(Tensor& t);
/// grad *= (output > 0)
void relu_backward(const Tensor& output, Tensor& grad);

/// Bilinear resampling with half-pixel centers (edge-clamped), the
/// align_corners=false convention.
void resize_bilinear(const Tensor& input, int out_h, int out_w, Tensor& output);
/// Adjoint of resize_bilinear.
void resize_bilinear_backward(const Tensor& grad_output, int in_h, int in_w,
                              Tensor& grad_input);

/// Softmax across channels at every pixel.
void softmax_channels(const Tensor& logits, Tensor& probs);

namespace reference {

void conv2d_forward(const ConvGeometry& geom, std::span<const float> weight,
                    std::span<const float> bias, const Tensor& input,
                    Tensor& output);
void conv2d_backward(const ConvGeometry& geom, std::span<const float> weight,
                     const Tensor& input, const Tensor& grad_output,
                     Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);
void resize_bilinear(const Tensor& input, int out_h, int out_w, Tensor& output);
void resize_bilinear_backward(const Tensor& grad_output, int in_h, int in_w,
                              Tensor& grad_input);
void softmax_channels(const Tensor& logits, Tensor& probs);

}  // namespace reference

}  // namespace tissueseg::kernels

#endif  // TISSUESEG_KERNELS_HPP_
