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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "test_util.hpp"

namespace tissueseg::nn {
namespace {

TEST(ParameterSet, RejectsDuplicateNames) {
  ParameterSet p;
  EXPECT_EQ(p.add("a", {2, 3}), 0);
  EXPECT_EQ(p[0].value.size(), 6u);
  EXPECT_EQ(p.index_of("a"), 0);
  EXPECT_EQ(p.index_of("b"), -1);
  EXPECT_ERROR_CODE(p.add("a", {1}), ErrorCode::kConfigError);
}

TEST(PolyLr, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(poly_lr(0.01, 0, 100, 0.9), 0.01);
  EXPECT_DOUBLE_EQ(poly_lr(0.01, 100, 100, 0.9), 0.0);
  EXPECT_NEAR(poly_lr(0.01, 50, 100, 0.9), 0.01 * std::pow(0.5, 0.9), 1e-15);
  EXPECT_NEAR(poly_lr(0.07, 25, 100, 1.0), 0.0525, 1e-15);
}

TEST(SgdMomentum, HandStep) {
  ParameterSet p;
  p.add("w", {2});
  p.add("b", {1}, /*decay=*/false);
  p[0].value = {1.0f, -2.0f};
  p[1].value = {0.5f};
  Gradients g(p);
  g[0][0] = 0.1f;
  g[0][1] = 0.2f;
  g[1][0] = 1.0f;
  SgdMomentum opt(p, 0.9, 0.01);
  opt.step(p, g, 0.1);
  // v = g + wd*w; w -= lr*v.
  EXPECT_FLOAT_EQ(p[0].value[0], 1.0f - 0.1f * (0.1f + 0.01f));
  EXPECT_FLOAT_EQ(p[0].value[1], -2.0f - 0.1f * (0.2f - 0.02f));
  EXPECT_FLOAT_EQ(p[1].value[0], 0.4f);
  opt.step(p, g, 0.1);
  // Second step: v = 0.9 * 1 + 1 = 1.9 for the undecayed bias.
  EXPECT_FLOAT_EQ(p[1].value[0], 0.4f - 0.19f);
}

TEST(Gradients, NormScaleAdd) {
  ParameterSet p;
  p.add("a", {2});
  Gradients g(p);
  g[0][0] = 3.0f;
  g[0][1] = 4.0f;
  EXPECT_DOUBLE_EQ(g.norm(), 5.0);
  Gradients h(p);
  h.add(g);
  h.add(g);
  h.scale(0.5f);
  EXPECT_FLOAT_EQ(h[0][1], 4.0f);
  h.zero();
  EXPECT_DOUBLE_EQ(h.norm(), 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir;
  ParameterSet p;
  p.add("enc.w", {4, 3});
  p.add("enc.b", {4}, false);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  for (auto& v : p[0].value) v = n(rng);
  for (auto& v : p[1].value) v = n(rng);
  save_checkpoint(dir.path(), p, {{"kind", "test"}});

  ParameterSet q;
  q.add("enc.w", {4, 3});
  q.add("enc.b", {4}, false);
  const auto meta = load_checkpoint(dir.path(), q);
  EXPECT_EQ(meta.at("kind"), "test");
  EXPECT_EQ(p[0].value, q[0].value);
  EXPECT_EQ(p[1].value, q[1].value);
}

TEST(Checkpoint, MismatchedShapesAndMissingFiles) {
  testing::TempDir dir;
  ParameterSet p;
  p.add("w", {3});
  save_checkpoint(dir.path(), p, nlohmann::json::object());
  ParameterSet wrong;
  wrong.add("w", {4});
  EXPECT_ERROR_CODE(load_checkpoint(dir.path(), wrong), ErrorCode::kConfigError);
  ParameterSet extra;
  extra.add("w", {3});
  extra.add("v", {1});
  EXPECT_ERROR_CODE(load_checkpoint(dir.path(), extra), ErrorCode::kConfigError);
  ParameterSet any;
  EXPECT_ERROR_CODE(load_checkpoint(dir / "nope", any), ErrorCode::kMissingFile);
}

TEST(Conv2dLayer, HeInitHasExpectedScale) {
  ParameterSet p;
  Conv2d conv(p, "c", {64, 64, 3, 1, 1, 1});
  std::mt19937_64 rng(5);
  conv.initialize(p, rng);
  double ss = 0.0;
  for (float v : p[0].value) ss += double(v) * v;
  const double var = ss / p[0].value.size();
  EXPECT_NEAR(var, 2.0 / (64 * 9), 0.1 * 2.0 / (64 * 9));
  for (float v : p[1].value) EXPECT_EQ(v, 0.0f);
}

}  // namespace
}  // namespace tissueseg::nn
