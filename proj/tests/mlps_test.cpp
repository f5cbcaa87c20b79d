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

#include "tissueseg/mlps.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tissueseg/kernels.hpp"
#include "tissueseg/synthetic.hpp"

namespace tissueseg {
namespace {

using testing::random_tensor;

Grid<std::uint8_t> labels_from(int h, int w, const std::vector<int>& v) {
  Grid<std::uint8_t> g(h, w);
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = static_cast<std::uint8_t>(v[i]);
  return g;
}

PseudoMaskSet random_targets(int c, int h, int w, std::mt19937_64& rng) {
  PseudoMaskSet s;
  s.patch_id = "p";
  for (Tap tap : kAllTaps) {
    Grid<std::uint8_t> g(h, w);
    for (auto& v : g.values()) v = static_cast<std::uint8_t>(rng() % c);
    s.masks[tap] = g;
  }
  return s;
}

double ce_oracle(const Tensor& z, const Grid<std::uint8_t>& labels) {
  double total = 0.0;
  int valid = 0;
  for (int y = 0; y < z.height(); ++y) {
    for (int x = 0; x < z.width(); ++x) {
      const int label = labels.at(y, x);
      if (label == kInvalidLabel) continue;
      double sum = 0.0;
      for (int k = 0; k < z.channels(); ++k) sum += std::exp(double(z.at(k, y, x)));
      total += std::log(sum) - z.at(label, y, x);
      ++valid;
    }
  }
  return total / valid;
}

TEST(MlpsLoss, ZeroLogitsGiveLogC) {
  std::mt19937_64 rng(1);
  const PseudoMaskSet t = random_targets(2, 3, 3, rng);
  EXPECT_NEAR(mlps_loss(Tensor(2, 3, 3), t, {}), std::log(2.0), 1e-12);
}

TEST(MlpsLoss, TwoClassThreeByThreeOracle) {
  std::mt19937_64 rng(2);
  const Tensor z = random_tensor(2, 3, 3, rng, -3.0f, 3.0f);
  PseudoMaskSet t;
  t.masks[Tap::kB4_3] = labels_from(3, 3, {0, 1, 1, 0, 0, 1, 1, 1, 0});
  t.masks[Tap::kB5_2] = labels_from(3, 3, {1, 1, 1, 0, 0, 0, 255, 1, 0});
  t.masks[Tap::kBn7] = labels_from(3, 3, {0, 0, 0, 0, 1, 1, 1, 1, 255});
  const double expected = 0.2 * ce_oracle(z, t.masks[Tap::kB4_3]) +
                          0.2 * ce_oracle(z, t.masks[Tap::kB5_2]) +
                          0.6 * ce_oracle(z, t.masks[Tap::kBn7]);
  EXPECT_NEAR(mlps_loss(z, t, {}), expected, 1e-6);
}

TEST(MlpsLoss, LinearInLambdas) {
  std::mt19937_64 rng(3);
  const Tensor z = random_tensor(4, 9, 7, rng, -2.0f, 2.0f);
  const PseudoMaskSet t = random_targets(4, 9, 7, rng);
  std::array<double, 3> per_tap{};
  for (int i = 0; i < 3; ++i) {
    MlpsLossConfig one;
    one.lambdas = {0, 0, 0};
    one.lambdas[i] = 1.0;
    per_tap[i] = mlps_loss(z, t, one);
  }
  MlpsLossConfig mix;
  mix.lambdas = {0.3, 1.7, 0.45};
  EXPECT_NEAR(mlps_loss(z, t, mix), 0.3 * per_tap[0] + 1.7 * per_tap[1] + 0.45 * per_tap[2],
              1e-9);
}

TEST(MlpsLoss, IdenticalMasksReduceToSingleCrossEntropy) {
  std::mt19937_64 rng(4);
  const Tensor z = random_tensor(3, 5, 5, rng, -2.0f, 2.0f);
  PseudoMaskSet t = random_targets(3, 5, 5, rng);
  t.masks[Tap::kB4_3] = t.masks[Tap::kBn7];
  t.masks[Tap::kB5_2] = t.masks[Tap::kBn7];
  EXPECT_NEAR(mlps_loss(z, t, {}), ce_oracle(z, t.masks[Tap::kBn7]), 1e-9);
}

TEST(MlpsLoss, PerfectLogitsGiveNearZero) {
  std::mt19937_64 rng(5);
  PseudoMaskSet t = random_targets(3, 4, 4, rng);
  t.masks[Tap::kB4_3] = t.masks[Tap::kBn7];
  t.masks[Tap::kB5_2] = t.masks[Tap::kBn7];
  Tensor z(3, 4, 4, -20.0f);
  for (int i = 0; i < 16; ++i) z.plane(t.masks[Tap::kBn7][i])[i] = 20.0f;
  EXPECT_LT(mlps_loss(z, t, {}), 1e-12);
}

TEST(MlpsLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Tensor z = random_tensor(3, 4, 5, rng, -2.0f, 2.0f);
  PseudoMaskSet t = random_targets(3, 4, 5, rng);
  t.masks[Tap::kB5_2][3] = kInvalidLabel;
  MlpsLossConfig cfg;
  cfg.lambdas = {0.5, 0.0, 0.8};
  Tensor grad;
  mlps_loss(z, t, cfg, &grad);
  for (std::size_t i = 0; i < z.size(); ++i) {
    Tensor plus = z;
    Tensor minus = z;
    plus.data()[i] += 1e-2f;
    minus.data()[i] -= 1e-2f;
    const double fd = (mlps_loss(plus, t, cfg) - mlps_loss(minus, t, cfg)) / 2e-2;
    EXPECT_NEAR(grad.data()[i], fd, 1e-4);
  }
}

TEST(MlpsLoss, ZeroWeightTapContributesNothing) {
  std::mt19937_64 rng(7);
  const Tensor z = random_tensor(3, 4, 4, rng);
  PseudoMaskSet a = random_targets(3, 4, 4, rng);
  PseudoMaskSet b = a;
  for (auto& v : b.masks[Tap::kB4_3].values()) v = static_cast<std::uint8_t>((v + 1) % 3);
  MlpsLossConfig cfg;
  cfg.lambdas = {0.0, 0.4, 0.6};
  Tensor ga;
  Tensor gb;
  EXPECT_EQ(mlps_loss(z, a, cfg, &ga), mlps_loss(z, b, cfg, &gb));
  EXPECT_EQ(ga, gb);
  b.masks.erase(Tap::kB4_3);
  EXPECT_NO_THROW(mlps_loss(z, b, cfg));
}

TEST(MlpsLoss, Errors) {
  std::mt19937_64 rng(8);
  const Tensor z = random_tensor(3, 4, 4, rng);
  PseudoMaskSet t = random_targets(3, 4, 4, rng);

  PseudoMaskSet missing = t;
  missing.masks.erase(Tap::kB5_2);
  EXPECT_ERROR_CODE(mlps_loss(z, missing, {}), ErrorCode::kMissingPseudoMask);

  PseudoMaskSet small = t;
  small.masks[Tap::kBn7] = Grid<std::uint8_t>(3, 4);
  EXPECT_ERROR_CODE(mlps_loss(z, small, {}), ErrorCode::kShapeError);

  PseudoMaskSet out_of_range = t;
  out_of_range.masks[Tap::kBn7][0] = 3;
  EXPECT_ERROR_CODE(mlps_loss(z, out_of_range, {}), ErrorCode::kShapeError);

  PseudoMaskSet empty = t;
  empty.masks[Tap::kB4_3] = Grid<std::uint8_t>(4, 4, kInvalidLabel);
  EXPECT_ERROR_CODE(mlps_loss(z, empty, {}), ErrorCode::kEmptyValidRegion);

  MlpsLossConfig negative;
  negative.lambdas = {-0.1, 0.5, 0.6};
  EXPECT_ERROR_CODE(mlps_loss(z, t, negative), ErrorCode::kConfigError);
  MlpsLossConfig zero;
  zero.lambdas = {0, 0, 0};
  EXPECT_ERROR_CODE(mlps_loss(z, t, zero), ErrorCode::kConfigError);
}

TEST(AugmentPair, FlipsMasksWithImageAndBlursOnlyImage) {
  std::mt19937_64 rng(9);
  Tensor image = random_tensor(3, 6, 5, rng, 0.0f, 1.0f);
  const Tensor original = image;
  PseudoMaskSet targets = random_targets(4, 6, 5, rng);
  const PseudoMaskSet before = targets;
  AugmentConfig cfg;
  const AugmentDraw draw{true, true, false, 0.0};
  augment_pair(draw, cfg, image, targets);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 5; ++x) {
      EXPECT_EQ(image.at(1, y, x), original.at(1, 5 - y, 4 - x));
      for (Tap tap : kAllTaps) EXPECT_EQ(targets.masks[tap].at(y, x), before.masks.at(tap).at(5 - y, 4 - x));
    }
  }

  Tensor blurred = original;
  PseudoMaskSet untouched = before;
  augment_pair({false, false, true, 0.8}, cfg, blurred, untouched);
  EXPECT_EQ(untouched, before);
  EXPECT_NE(blurred, original);
}

TEST(Segmenter, OutputMatchesInputSize) {
  Segmenter seg(4);
  seg.initialize(1);
  std::mt19937_64 rng(10);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{224, 224}, std::pair{100, 77}}) {
    Segmenter::Trace trace;
    const Tensor logits = seg.forward(random_tensor(3, h, w, rng), trace);
    EXPECT_EQ(logits.channels(), 4);
    EXPECT_EQ(logits.height(), h);
    EXPECT_EQ(logits.width(), w);
  }
  Segmenter::Trace trace;
  EXPECT_ERROR_CODE(seg.forward(Tensor(3, 63, 64), trace), ErrorCode::kShapeError);
}

TEST(Segmenter, DirectionalGradientCheckPerLayer) {
  Segmenter seg(3);
  seg.initialize(2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-0.05f, 0.05f);
  for (int i = 0; i < seg.parameters().size(); ++i) {
    if (seg.parameters()[i].name.ends_with(".bias")) {
      for (auto& v : seg.parameters()[i].value) v = u(rng);
    }
  }
  const Tensor input = random_tensor(3, 64, 64, rng);
  const PseudoMaskSet targets = random_targets(3, 64, 64, rng);
  Segmenter::Trace trace;
  const Tensor logits = seg.forward(input, trace);
  Tensor grad_logits;
  mlps_loss(logits, targets, {}, &grad_logits);
  nn::Gradients grads(seg.parameters());
  seg.backward(trace, grad_logits, grads);

  auto loss_with = [&](const nn::ParameterSet& p) {
    Segmenter copy(3);
    copy.parameters() = p;
    Segmenter::Trace t;
    return mlps_loss(copy.forward(input, t), targets, {});
  };
  for (int i = 0; i < seg.parameters().size(); ++i) {
    double g2 = 0.0;
    for (float v : grads[i]) g2 += double(v) * v;
    if (g2 == 0.0) continue;
    const double h = 1e-2 / std::sqrt(g2);
    nn::ParameterSet plus = seg.parameters();
    nn::ParameterSet minus = seg.parameters();
    for (std::size_t j = 0; j < plus[i].value.size(); ++j) {
      plus[i].value[j] += static_cast<float>(h * grads[i][j]);
      minus[i].value[j] -= static_cast<float>(h * grads[i][j]);
    }
    const double numeric = (loss_with(plus) - loss_with(minus)) / (2 * h);
    EXPECT_NEAR(numeric / g2, 1.0, 2e-2) << seg.parameters()[i].name;
  }
}

TEST(Segmenter, SaveLoadAndPredictProbs) {
  testing::TempDir dir;
  Segmenter seg(4);
  seg.initialize(3);
  seg.normalization().stddev = {0.5f, 0.6f, 0.7f};
  seg.save(dir.path(), synthetic_taxonomy(4));
  TissueTaxonomy tax;
  const auto loaded = Segmenter::load(dir.path(), &tax);
  EXPECT_EQ(tax, synthetic_taxonomy(4));
  EXPECT_EQ(loaded->normalization(), seg.normalization());
  Patch p;
  std::mt19937_64 rng(12);
  p.pixels = random_tensor(3, 64, 80, rng, 0.0f, 1.0f);
  const Tensor probs = loaded->predict_probs(p);
  EXPECT_EQ(probs, seg.predict_probs(p));
  for (int y = 0; y < 64; y += 9) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += probs.at(k, y, y);
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(SupervisedTargets, InvalidPixelsBecomeIgnored) {
  SegmentationMask m(2, 2);
  m.labels[1] = 2;
  m.valid[3] = 0;
  const PseudoMaskSet t = supervised_targets(m, "x");
  ASSERT_EQ(t.masks.size(), 1u);
  EXPECT_EQ(t.masks.at(Tap::kBn7).values(), (std::vector<std::uint8_t>{0, 2, 0, kInvalidLabel}));
  MlpsLossConfig cfg;
  cfg.lambdas = {0, 0, 1};
  EXPECT_NO_THROW(mlps_loss(Tensor(3, 2, 2), t, cfg));
}

TEST(TrainPhase2, LossDecreasesOnSyntheticData) {
  SyntheticOptions opt;
  opt.patch_size = 64;
  opt.seed = 4;
  std::vector<Phase2Sample> train;
  for (auto& p : make_synthetic(16, opt)) {
    Phase2Sample s;
    s.patch.pixels = std::move(p.pixels);
    s.patch.patch_id = p.patch_id;
    s.targets = supervised_targets(p.mask, p.patch_id);
    train.push_back(std::move(s));
  }
  TrainConfig cfg = default_config(DatasetKind::kLuad, 2);
  cfg.lambdas = {0, 0, 1};
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.lr0 = 1e-2;
  Segmenter seg(4);
  seg.initialize(5);
  std::vector<double> seen;
  const auto logs = train_phase2(seg, train, cfg, [&](const Phase2EpochLog& l) { seen.push_back(l.loss); });
  ASSERT_EQ(logs.size(), 6u);
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_LT(logs.back().loss, logs.front().loss);
  EXPECT_GT(logs.front().lr, logs.back().lr);
}

}  // namespace
}  // namespace tissueseg
