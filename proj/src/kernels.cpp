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

#include "tissueseg/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tissueseg/error.hpp"

namespace tissueseg::kernels {
namespace {

void check_conv_shapes(const ConvGeometry& g, std::span<const float> weight,
                       const Tensor& input) {
  if (input.channels() != g.in_channels) {
    throw Error(ErrorCode::kShapeError, "conv input channel mismatch");
  }
  if (weight.size() != g.weight_count()) {
    throw Error(ErrorCode::kShapeError, "conv weight size mismatch");
  }
  if (g.out_extent(input.height()) < 1 || g.out_extent(input.width()) < 1) {
    throw Error(ErrorCode::kShapeError, "conv input smaller than kernel");
  }
}

// Rows of the column buffer are (ic, ky, kx); columns are output pixels.
void im2col(const ConvGeometry& g, const Tensor& input, int out_h, int out_w,
            std::vector<float>& col) {
  const int k = g.kernel;
  const int in_h = input.height();
  const int in_w = input.width();
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  col.resize(static_cast<std::size_t>(g.in_channels) * k * k * plane);
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < g.in_channels; ++ic) {
    const float* src = input.plane(ic).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col.data() + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dilation;
          float* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= in_h) {
            std::fill(row, row + out_w, 0.0f);
            continue;
          }
          const float* src_row = src + static_cast<std::size_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dilation;
            row[ox] = (ix >= 0 && ix < in_w) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const std::vector<float>& col, int out_h,
            int out_w, Tensor& grad_input) {
  const int k = g.kernel;
  const int in_h = grad_input.height();
  const int in_w = grad_input.width();
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < g.in_channels; ++ic) {
    float* dst = grad_input.plane(ic).data();
    std::fill(dst, dst + static_cast<std::size_t>(in_h) * in_w, 0.0f);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col.data() + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dilation;
          if (iy < 0 || iy >= in_h) continue;
          const float* row = src + static_cast<std::size_t>(oy) * out_w;
          float* dst_row = dst + static_cast<std::size_t>(iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dilation;
            if (ix >= 0 && ix < in_w) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

struct AxisTable {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<float> frac;
};

AxisTable bilinear_axis(int in, int out) {
  AxisTable t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    t.lo[o] = lo;
    t.hi[o] = std::min(lo + 1, in - 1);
    t.frac[o] = static_cast<float>(src - lo);
  }
  return t;
}

thread_local std::vector<float> tls_col;
thread_local std::vector<float> tls_grad_col;

}  // namespace

void init_threading() { openblas_set_num_threads(1); }

void conv2d_forward(const ConvGeometry& g, std::span<const float> weight,
                    std::span<const float> bias, const Tensor& input,
                    Tensor& output) {
  check_conv_shapes(g, weight, input);
  const int out_h = g.out_extent(input.height());
  const int out_w = g.out_extent(input.width());
  if (output.channels() != g.out_channels || output.height() != out_h ||
      output.width() != out_w) {
    output = Tensor(g.out_channels, out_h, out_w);
  }
  const int plane = out_h * out_w;
  const int depth = g.in_channels * g.kernel * g.kernel;
  const float* col = input.data();
  if (!g.is_pointwise()) {
    im2col(g, input, out_h, out_w, tls_col);
    col = tls_col.data();
  }
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, g.out_channels, plane,
              depth, 1.0f, weight.data(), depth, col, plane, 0.0f,
              output.data(), plane);
  if (!bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < g.out_channels; ++oc) {
      float* dst = output.plane(oc).data();
      const float b = bias[oc];
      for (int i = 0; i < plane; ++i) dst[i] += b;
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const float> weight,
                     const Tensor& input, const Tensor& grad_output,
                     Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  check_conv_shapes(g, weight, input);
  const int out_h = grad_output.height();
  const int out_w = grad_output.width();
  if (grad_output.channels() != g.out_channels ||
      out_h != g.out_extent(input.height()) ||
      out_w != g.out_extent(input.width())) {
    throw Error(ErrorCode::kShapeError, "conv grad_output shape mismatch");
  }
  const int plane = out_h * out_w;
  const int depth = g.in_channels * g.kernel * g.kernel;
  const float* col = input.data();
  if (!g.is_pointwise()) {
    im2col(g, input, out_h, out_w, tls_col);
    col = tls_col.data();
  }
  // dW += dY * col^T
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, g.out_channels, depth,
              plane, 1.0f, grad_output.data(), plane, col, plane, 1.0f,
              grad_weight.data(), depth);
  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < g.out_channels; ++oc) {
      const float* src = grad_output.plane(oc).data();
      float acc = 0.0f;
      for (int i = 0; i < plane; ++i) acc += src[i];
      grad_bias[oc] += acc;
    }
  }
  if (grad_input == nullptr) return;
  if (!grad_input->same_shape(input)) {
    *grad_input = Tensor(input.channels(), input.height(), input.width());
  }
  if (g.is_pointwise()) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, depth, plane,
                g.out_channels, 1.0f, weight.data(), depth, grad_output.data(),
                plane, 0.0f, grad_input->data(), plane);
    return;
  }
  tls_grad_col.resize(static_cast<std::size_t>(depth) * plane);
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, depth, plane,
              g.out_channels, 1.0f, weight.data(), depth, grad_output.data(),
              plane, 0.0f, tls_grad_col.data(), plane);
  col2im(g, tls_grad_col, out_h, out_w, *grad_input);
}

void relu_inplace(Tensor& t) {
  float* p = t.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(t.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
}

void relu_backward(const Tensor& output, Tensor& grad) {
  if (!output.same_shape(grad)) {
    throw Error(ErrorCode::kShapeError, "relu_backward shape mismatch");
  }
  const float* o = output.data();
  float* g = grad.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grad.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    if (!(o[i] > 0.0f)) g[i] = 0.0f;
  }
}

void resize_bilinear(const Tensor& input, int out_h, int out_w, Tensor& output) {
  const AxisTable ty = bilinear_axis(input.height(), out_h);
  const AxisTable tx = bilinear_axis(input.width(), out_w);
  output = Tensor(input.channels(), out_h, out_w);
  const int rows = input.channels() * out_h;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / out_h;
    const int y = r % out_h;
    const float fy = ty.frac[y];
    const float* row0 = input.plane(c).data() + static_cast<std::size_t>(ty.lo[y]) * input.width();
    const float* row1 = input.plane(c).data() + static_cast<std::size_t>(ty.hi[y]) * input.width();
    float* dst = output.plane(c).data() + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) {
      const float fx = tx.frac[x];
      const float top = row0[tx.lo[x]] * (1.0f - fx) + row0[tx.hi[x]] * fx;
      const float bottom = row1[tx.lo[x]] * (1.0f - fx) + row1[tx.hi[x]] * fx;
      dst[x] = top * (1.0f - fy) + bottom * fy;
    }
  }
}

void resize_bilinear_backward(const Tensor& grad_output, int in_h, int in_w,
                              Tensor& grad_input) {
  const int out_h = grad_output.height();
  const int out_w = grad_output.width();
  const AxisTable ty = bilinear_axis(in_h, out_h);
  const AxisTable tx = bilinear_axis(in_w, out_w);
  grad_input = Tensor(grad_output.channels(), in_h, in_w);
  // Each channel scatters into its own plane, so channels are independent.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < grad_output.channels(); ++c) {
    const float* src = grad_output.plane(c).data();
    float* dst = grad_input.plane(c).data();
    for (int y = 0; y < out_h; ++y) {
      const float fy = ty.frac[y];
      float* row0 = dst + static_cast<std::size_t>(ty.lo[y]) * in_w;
      float* row1 = dst + static_cast<std::size_t>(ty.hi[y]) * in_w;
      for (int x = 0; x < out_w; ++x) {
        const float g = src[static_cast<std::size_t>(y) * out_w + x];
        const float fx = tx.frac[x];
        const float gt = g * (1.0f - fy);
        const float gb = g * fy;
        row0[tx.lo[x]] += gt * (1.0f - fx);
        row0[tx.hi[x]] += gt * fx;
        row1[tx.lo[x]] += gb * (1.0f - fx);
        row1[tx.hi[x]] += gb * fx;
      }
    }
  }
}

void softmax_channels(const Tensor& logits, Tensor& probs) {
  if (!probs.same_shape(logits)) {
    probs = Tensor(logits.channels(), logits.height(), logits.width());
  }
  const int c = logits.channels();
  const int n = logits.plane_size();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    float mx = logits.data()[i];
    for (int k = 1; k < c; ++k) {
      mx = std::max(mx, logits.data()[static_cast<std::size_t>(k) * n + i]);
    }
    float sum = 0.0f;
    for (int k = 0; k < c; ++k) {
      const float e = std::exp(logits.data()[static_cast<std::size_t>(k) * n + i] - mx);
      probs.data()[static_cast<std::size_t>(k) * n + i] = e;
      sum += e;
    }
    const float inv = 1.0f / sum;
    for (int k = 0; k < c; ++k) probs.data()[static_cast<std::size_t>(k) * n + i] *= inv;
  }
}

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const float> weight,
                    std::span<const float> bias, const Tensor& input,
                    Tensor& output) {
  check_conv_shapes(g, weight, input);
  const int out_h = g.out_extent(input.height());
  const int out_w = g.out_extent(input.width());
  output = Tensor(g.out_channels, out_h, out_w);
  const int k = g.kernel;
  for (int oc = 0; oc < g.out_channels; ++oc) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < g.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky * g.dilation;
            if (iy < 0 || iy >= input.height()) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx * g.dilation;
              if (ix < 0 || ix >= input.width()) continue;
              acc += static_cast<double>(weight[((static_cast<std::size_t>(oc) * g.in_channels + ic) * k + ky) * k + kx]) *
                     input.at(ic, iy, ix);
            }
          }
        }
        output.at(oc, oy, ox) = static_cast<float>(acc);
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const float> weight,
                     const Tensor& input, const Tensor& grad_output,
                     Tensor* grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  check_conv_shapes(g, weight, input);
  const int k = g.kernel;
  if (grad_input != nullptr) {
    *grad_input = Tensor(input.channels(), input.height(), input.width());
  }
  for (int oc = 0; oc < g.out_channels; ++oc) {
    for (int oy = 0; oy < grad_output.height(); ++oy) {
      for (int ox = 0; ox < grad_output.width(); ++ox) {
        const float go = grad_output.at(oc, oy, ox);
        if (!grad_bias.empty()) grad_bias[oc] += go;
        for (int ic = 0; ic < g.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad + ky * g.dilation;
            if (iy < 0 || iy >= input.height()) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - g.pad + kx * g.dilation;
              if (ix < 0 || ix >= input.width()) continue;
              const std::size_t wi = ((static_cast<std::size_t>(oc) * g.in_channels + ic) * k + ky) * k + kx;
              grad_weight[wi] += go * input.at(ic, iy, ix);
              if (grad_input != nullptr) grad_input->at(ic, iy, ix) += go * weight[wi];
            }
          }
        }
      }
    }
  }
}

namespace {

float source_coord(int o, int in, int out) {
  float s = (o + 0.5f) * static_cast<float>(in) / static_cast<float>(out) - 0.5f;
  return s < 0.0f ? 0.0f : s;
}

}  // namespace

void resize_bilinear(const Tensor& input, int out_h, int out_w, Tensor& output) {
  output = Tensor(input.channels(), out_h, out_w);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      const float sy = source_coord(y, input.height(), out_h);
      const int y0 = std::min(static_cast<int>(sy), input.height() - 1);
      const int y1 = std::min(y0 + 1, input.height() - 1);
      const float fy = sy - y0;
      for (int x = 0; x < out_w; ++x) {
        const float sx = source_coord(x, input.width(), out_w);
        const int x0 = std::min(static_cast<int>(sx), input.width() - 1);
        const int x1 = std::min(x0 + 1, input.width() - 1);
        const float fx = sx - x0;
        output.at(c, y, x) = (1 - fy) * ((1 - fx) * input.at(c, y0, x0) + fx * input.at(c, y0, x1)) +
                             fy * ((1 - fx) * input.at(c, y1, x0) + fx * input.at(c, y1, x1));
      }
    }
  }
}

void resize_bilinear_backward(const Tensor& grad_output, int in_h, int in_w,
                              Tensor& grad_input) {
  grad_input = Tensor(grad_output.channels(), in_h, in_w);
  const int out_h = grad_output.height();
  const int out_w = grad_output.width();
  for (int c = 0; c < grad_output.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      const float sy = source_coord(y, in_h, out_h);
      const int y0 = std::min(static_cast<int>(sy), in_h - 1);
      const int y1 = std::min(y0 + 1, in_h - 1);
      const float fy = sy - y0;
      for (int x = 0; x < out_w; ++x) {
        const float sx = source_coord(x, in_w, out_w);
        const int x0 = std::min(static_cast<int>(sx), in_w - 1);
        const int x1 = std::min(x0 + 1, in_w - 1);
        const float fx = sx - x0;
        const float g = grad_output.at(c, y, x);
        grad_input.at(c, y0, x0) += g * (1 - fy) * (1 - fx);
        grad_input.at(c, y0, x1) += g * (1 - fy) * fx;
        grad_input.at(c, y1, x0) += g * fy * (1 - fx);
        grad_input.at(c, y1, x1) += g * fy * fx;
      }
    }
  }
}

void softmax_channels(const Tensor& logits, Tensor& probs) {
  probs = Tensor(logits.channels(), logits.height(), logits.width());
  for (int y = 0; y < logits.height(); ++y) {
    for (int x = 0; x < logits.width(); ++x) {
      double mx = logits.at(0, y, x);
      for (int k = 1; k < logits.channels(); ++k) mx = std::max<double>(mx, logits.at(k, y, x));
      double sum = 0.0;
      for (int k = 0; k < logits.channels(); ++k) sum += std::exp(logits.at(k, y, x) - mx);
      for (int k = 0; k < logits.channels(); ++k) {
        probs.at(k, y, x) = static_cast<float>(std::exp(logits.at(k, y, x) - mx) / sum);
      }
    }
  }
}

}  // namespace reference

}  // namespace tissueseg::kernels
