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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "test_util.hpp"

namespace tissueseg::kernels {
namespace {

using tissueseg::testing::random_tensor;

float max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_TRUE(a.same_shape(b));
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct ConvCase {
  ConvGeometry geom;
  int h;
  int w;
};

class ConvMatchesReference : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvMatchesReference, ForwardAndBackward) {
  const ConvCase& cc = GetParam();
  const ConvGeometry& g = cc.geom;
  std::mt19937_64 rng(42);
  const Tensor input = random_tensor(g.in_channels, cc.h, cc.w, rng);
  const auto weight = random_vec(g.weight_count(), rng);
  const auto bias = random_vec(g.out_channels, rng);

  Tensor fast;
  Tensor slow;
  conv2d_forward(g, weight, bias, input, fast);
  reference::conv2d_forward(g, weight, bias, input, slow);
  EXPECT_EQ(fast.height(), g.out_extent(cc.h));
  EXPECT_EQ(fast.width(), g.out_extent(cc.w));
  EXPECT_LT(max_abs_diff(fast, slow), 1e-4f);

  const Tensor grad_out = random_tensor(g.out_channels, fast.height(), fast.width(), rng);
  Tensor gi_fast;
  Tensor gi_slow;
  std::vector<float> gw_fast(g.weight_count(), 0.5f);
  std::vector<float> gw_slow(g.weight_count(), 0.5f);
  std::vector<float> gb_fast(g.out_channels, 0.25f);
  std::vector<float> gb_slow(g.out_channels, 0.25f);
  conv2d_backward(g, weight, input, grad_out, &gi_fast, gw_fast, gb_fast);
  reference::conv2d_backward(g, weight, input, grad_out, &gi_slow, gw_slow, gb_slow);
  EXPECT_LT(max_abs_diff(gi_fast, gi_slow), 1e-4f);
  for (std::size_t i = 0; i < gw_fast.size(); ++i) EXPECT_NEAR(gw_fast[i], gw_slow[i], 1e-3f);
  for (std::size_t i = 0; i < gb_fast.size(); ++i) EXPECT_NEAR(gb_fast[i], gb_slow[i], 1e-3f);
}

INSTANTIATE_TEST_SUITE_P(
    Geometries, ConvMatchesReference,
    ::testing::Values(ConvCase{{3, 16, 4, 4, 0, 1}, 64, 64},
                      ConvCase{{16, 32, 2, 2, 0, 1}, 16, 20},
                      ConvCase{{32, 32, 3, 1, 1, 1}, 9, 11},
                      ConvCase{{32, 48, 3, 1, 2, 2}, 8, 8},
                      ConvCase{{48, 5, 1, 1, 0, 1}, 7, 13},
                      ConvCase{{4, 6, 3, 2, 1, 1}, 10, 9}));

TEST(Conv, HandComputedThreeByThree) {
  // Single channel, 3x3 box filter with pad 1 on a 3x3 ramp.
  const ConvGeometry g{1, 1, 3, 1, 1, 1};
  Tensor input(1, 3, 3);
  for (int i = 0; i < 9; ++i) input.data()[i] = static_cast<float>(i + 1);
  const std::vector<float> weight(9, 1.0f);
  const std::vector<float> bias{0.5f};
  Tensor out;
  conv2d_forward(g, weight, bias, input, out);
  const std::vector<float> expected{12.5f, 21.5f, 16.5f, 27.5f, 45.5f, 33.5f, 24.5f, 39.5f, 28.5f};
  for (int i = 0; i < 9; ++i) EXPECT_FLOAT_EQ(out.data()[i], expected[i]);
}

TEST(Conv, BackwardIsAdjointOfForward) {
  // <conv(x), y> == <x, conv^T(y)> for the bias-free convolution.
  const ConvGeometry g{5, 7, 3, 2, 2, 2};
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(5, 17, 15, rng);
  const auto weight = random_vec(g.weight_count(), rng);
  Tensor y;
  conv2d_forward(g, weight, {}, x, y);
  const Tensor r = random_tensor(y.channels(), y.height(), y.width(), rng);
  Tensor gx;
  std::vector<float> gw(g.weight_count(), 0.0f);
  conv2d_backward(g, weight, x, r, &gx, gw, {});
  double lhs = 0.0;
  double rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += double(y.data()[i]) * r.data()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += double(x.data()[i]) * gx.data()[i];
  EXPECT_NEAR(lhs, rhs, 1e-3 * std::abs(lhs) + 1e-4);
}

TEST(Resize, TwoByTwoToFourByFour) {
  Tensor in(1, 2, 2);
  in.at(0, 0, 0) = 0.0f;
  in.at(0, 0, 1) = 1.0f;
  in.at(0, 1, 0) = 2.0f;
  in.at(0, 1, 1) = 3.0f;
  Tensor out;
  resize_bilinear(in, 4, 4, out);
  // Half-pixel centres: output coordinates map to -0.25, 0.25, 0.75, 1.25.
  const float row0[] = {0.0f, 0.25f, 0.75f, 1.0f};
  const float rows[] = {0.0f, 0.5f, 1.5f, 2.0f};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) EXPECT_FLOAT_EQ(out.at(0, y, x), row0[x] + rows[y]);
  }
}

TEST(Resize, IdentityAtSameSize) {
  std::mt19937_64 rng(8);
  const Tensor in = random_tensor(3, 9, 7, rng);
  Tensor out;
  resize_bilinear(in, 9, 7, out);
  EXPECT_LT(max_abs_diff(in, out), 1e-6f);
}

TEST(Resize, MatchesReferenceAndIsAdjoint) {
  std::mt19937_64 rng(9);
  const Tensor in = random_tensor(4, 13, 11, rng);
  for (auto [oh, ow] : {std::pair{52, 44}, std::pair{7, 5}, std::pair{224, 224}}) {
    Tensor fast;
    Tensor slow;
    resize_bilinear(in, oh, ow, fast);
    reference::resize_bilinear(in, oh, ow, slow);
    EXPECT_LT(max_abs_diff(fast, slow), 1e-5f);

    const Tensor r = random_tensor(4, oh, ow, rng);
    Tensor back_fast;
    Tensor back_slow;
    resize_bilinear_backward(r, 13, 11, back_fast);
    reference::resize_bilinear_backward(r, 13, 11, back_slow);
    EXPECT_LT(max_abs_diff(back_fast, back_slow), 1e-4f);
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t i = 0; i < fast.size(); ++i) lhs += double(fast.data()[i]) * r.data()[i];
    for (std::size_t i = 0; i < in.size(); ++i) rhs += double(in.data()[i]) * back_fast.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-3 * std::abs(lhs) + 1e-3);
  }
}

TEST(Softmax, SumsToOneAndMatchesReference) {
  std::mt19937_64 rng(10);
  Tensor logits = random_tensor(5, 6, 7, rng, -30.0f, 30.0f);
  logits.at(2, 0, 0) = 500.0f;  // overflow guard
  Tensor fast;
  Tensor slow;
  softmax_channels(logits, fast);
  reference::softmax_channels(logits, slow);
  EXPECT_LT(max_abs_diff(fast, slow), 1e-6f);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 7; ++x) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += fast.at(k, y, x);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
  }
  EXPECT_NEAR(fast.at(2, 0, 0), 1.0f, 1e-6f);
}

TEST(Relu, ForwardAndBackward) {
  Tensor t(1, 1, 4);
  t.values() = {-1.0f, 0.0f, 2.0f, -3.0f};
  relu_inplace(t);
  EXPECT_EQ(t.values(), (std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f}));
  Tensor g(1, 1, 4, 1.0f);
  relu_backward(t, g);
  EXPECT_EQ(g.values(), (std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f}));
}

}  // namespace
}  // namespace tissueseg::kernels
