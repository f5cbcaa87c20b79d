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

#include "tissueseg/pda.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tissueseg/synthetic.hpp"

namespace tissueseg {
namespace {

using testing::random_tensor;

CamStack cams_from(int c, int h, int w, const std::vector<float>& values) {
  CamStack s;
  s.maps = Tensor(c, h, w);
  s.maps.values() = values;
  return s;
}

std::vector<Sample> synthetic_samples(int n, int size, std::uint64_t seed) {
  SyntheticOptions opt;
  opt.patch_size = size;
  opt.seed = seed;
  std::vector<Sample> out;
  for (auto& p : make_synthetic(n, opt)) {
    Sample s;
    s.patch.pixels = std::move(p.pixels);
    s.patch.patch_id = p.patch_id;
    s.label = p.label;
    s.mask = std::move(p.mask);
    out.push_back(std::move(s));
  }
  return out;
}

TEST(Schedule, WarmupThenDecay) {
  PdaSchedule s;
  std::vector<double> mus;
  for (int e = 0; e < 4; ++e) {
    s = step_schedule(s, e);
    mus.push_back(s.mu);
  }
  EXPECT_EQ(mus, (std::vector<double>{1.0, 1.0, 1.0, 0.985}));
}

TEST(Schedule, ClampsAfterThirtySteps) {
  EXPECT_LT(std::pow(0.985, 30), 0.65);
  PdaSchedule s;
  for (int e = 0; e < 3 + 30; ++e) s = step_schedule(s, e);
  EXPECT_DOUBLE_EQ(s.mu, 0.65);
}

TEST(Schedule, ImmediateClampWhenSigmaBelowBound) {
  PdaSchedule s{0.5, 0.9, 3, 1.0};
  for (int e = 0; e < 4; ++e) s = step_schedule(s, e);
  EXPECT_DOUBLE_EQ(s.mu, 0.9);
}

TEST(Schedule, MonotoneNonIncreasing) {
  PdaSchedule s;
  double prev = 1.0;
  for (int e = 0; e < 200; ++e) {
    s = step_schedule(s, e);
    EXPECT_LE(s.mu, prev);
    EXPECT_GE(s.mu, 0.65);
    prev = s.mu;
  }
}

TEST(ClassActivationMaps, ScalarAndZeroWeights) {
  ClassifierHead head{2, 1, {2.0f, 0.0f}, {0.0f, 0.0f}};
  const CamStack s = class_activation_maps(Tensor(1, 2, 2, 1.0f), head);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(s.maps.plane(0)[i], 2.0f);
    EXPECT_EQ(s.maps.plane(1)[i], 0.0f);
  }
}

TEST(ClassActivationMaps, MatchesLoopOracle) {
  std::mt19937_64 rng(4);
  const Tensor m = random_tensor(8, 4, 4, rng);
  ClassifierHead head{3, 8, {}, std::vector<float>(3, 0.0f)};
  std::uniform_real_distribution<float> u(-1, 1);
  for (int i = 0; i < 24; ++i) head.weights.push_back(u(rng));
  const CamStack s = class_activation_maps(m, head);
  for (int k = 0; k < 3; ++k) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        double acc = 0.0;
        for (int ch = 0; ch < 8; ++ch) acc += double(head.weight(k, ch)) * m.at(ch, y, x);
        EXPECT_NEAR(s.maps.at(k, y, x), acc, 1e-5);
      }
    }
  }
  EXPECT_ERROR_CODE(class_activation_maps(Tensor(7, 4, 4), head), ErrorCode::kShapeError);
}

TEST(Dropout, HandExample) {
  const DeactivatedCams d = dropout_deactivate(cams_from(1, 2, 2, {1, 2, 3, 4}), 0.7);
  EXPECT_NEAR(d.cutoffs[0], 2.8, 1e-6);
  EXPECT_EQ(d.cams.maps.values(), (std::vector<float>{1, 2, 0, 0}));
  EXPECT_EQ(d.keep, (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(Dropout, AttentionIsMeanOfDeactivatedMaps) {
  // With mu = 1 nothing is deactivated, so A is the plain mean.
  const DeactivatedCams d = dropout_deactivate(cams_from(2, 1, 2, {1, 0, 3, 2}), 1.0);
  EXPECT_EQ(d.attention.values(), (std::vector<float>{2.0f, 1.0f}));
}

TEST(Dropout, MuOneIsIdentity) {
  std::mt19937_64 rng(6);
  CamStack s;
  s.maps = random_tensor(4, 5, 5, rng, -2.0f, 3.0f);
  const DeactivatedCams d = dropout_deactivate(s, 1.0);
  EXPECT_EQ(d.cams.maps, s.maps);
  EXPECT_EQ(d.attention, mean_attention(s));
}

TEST(Dropout, ConstantMapIsFullyZeroedBelowOne) {
  const DeactivatedCams d = dropout_deactivate(cams_from(1, 2, 2, {3, 3, 3, 3}), 0.9);
  for (float v : d.cams.maps.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Dropout, NegativeMapsFollowTheComparisonAsWritten) {
  // max = -1, beta = -0.5: every value is <= beta except none; all kept.
  const DeactivatedCams d = dropout_deactivate(cams_from(1, 1, 3, {-3, -2, -1}), 0.5);
  EXPECT_NEAR(d.cutoffs[0], -0.5, 1e-7);
  EXPECT_EQ(d.cams.maps.values(), (std::vector<float>{-3, -2, -1}));
}

TEST(Dropout, AreaMonotoneInMu) {
  std::mt19937_64 rng(7);
  CamStack s;
  s.maps = random_tensor(3, 6, 6, rng, 0.0f, 1.0f);
  auto zeroed = [&](double mu) { return dropout_deactivate(s, mu).keep; };
  for (double mu : {0.95, 0.8, 0.65, 0.3}) {
    const auto hi = zeroed(mu);
    const auto lo = zeroed(mu - 0.1);
    for (std::size_t i = 0; i < hi.size(); ++i) {
      if (!hi[i]) {
        EXPECT_FALSE(lo[i]);
      }
    }
  }
}

TEST(Attention, IdentityZeroAndLoopOracle) {
  std::mt19937_64 rng(8);
  const Tensor m = random_tensor(5, 3, 4, rng);
  EXPECT_EQ(apply_attention(m, Grid<float>(3, 4, 1.0f)), m);
  const Tensor zeroed = apply_attention(m, Grid<float>(3, 4, 0.0f));
  for (float v : zeroed.values()) EXPECT_EQ(v, 0.0f);
  Grid<float> a(3, 4);
  for (auto& v : a.values()) v = std::uniform_real_distribution<float>(-1, 1)(rng);
  const Tensor out = apply_attention(m, a);
  for (int ch = 0; ch < 5; ++ch) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x) EXPECT_EQ(out.at(ch, y, x), a.at(y, x) * m.at(ch, y, x));
    }
  }
  EXPECT_ERROR_CODE(apply_attention(m, Grid<float>(2, 4)), ErrorCode::kShapeError);
}

TEST(Logits, ScalarCasesAndOracle) {
  const ClassifierHead one{1, 1, {3.0f}, {-1.0f}};
  EXPECT_FLOAT_EQ(predict_logits(Tensor(1, 2, 2, 1.0f), one)[0], 2.0f);
  Tensor t(1, 2, 2);
  t.at(0, 1, 0) = 4.0f;
  EXPECT_FLOAT_EQ(global_average_pool(t)[0], 1.0f);

  std::mt19937_64 rng(9);
  const Tensor m = random_tensor(6, 5, 3, rng);
  ClassifierHead head{2, 6, {}, {0.5f, -0.25f}};
  for (int i = 0; i < 12; ++i) head.weights.push_back(static_cast<float>(i) / 10 - 0.6f);
  const auto logits = predict_logits(m, head);
  for (int k = 0; k < 2; ++k) {
    double acc = head.bias[k];
    for (int ch = 0; ch < 6; ++ch) {
      double mean = 0.0;
      for (float v : m.plane(ch)) mean += v;
      acc += head.weight(k, ch) * mean / 15.0;
    }
    EXPECT_NEAR(logits[k], acc, 1e-5);
  }
}

TEST(Loss, SoftMarginHandValue) {
  const std::vector<float> logits{0.0f, 2.0f};
  PatchLabel label{{1, 0}};
  std::vector<float> grad;
  const double loss = multilabel_soft_margin_loss(logits, label, &grad);
  const double expected = 0.5 * (std::log(2.0) + std::log1p(std::exp(2.0)));
  EXPECT_NEAR(loss, expected, 1e-6);
  EXPECT_NEAR(grad[0], 0.5 * (0.5 - 1.0), 1e-6);
  EXPECT_NEAR(grad[1], 0.5 / (1.0 + std::exp(-2.0)), 1e-6);
}

TEST(Classifier, MuOneForwardEqualsExplicitComposition) {
  PdaClassifier model(3);
  model.initialize(11);
  std::mt19937_64 rng(12);
  const Tensor input = random_tensor(3, 64, 64, rng);
  PdaClassifier::Pass pass;
  model.forward(input, 1.0, HeadMode::kDropoutAttention, pass);

  const FeatureBundle f = model.backbone().extract(model.parameters(), input);
  const ClassifierHead head = model.head();
  const CamStack cams = class_activation_maps(f.at(Tap::kBn7), head);
  const auto logits = predict_logits(apply_attention(f.at(Tap::kBn7), mean_attention(cams)), head);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(pass.logits[k], logits[k], 1e-4 * (1 + std::abs(logits[k])));
}

TEST(Classifier, HeadGradientDirectionalCheck) {
  PdaClassifier model(3);
  model.initialize(13);
  std::mt19937_64 rng(14);
  const Tensor input = random_tensor(3, 64, 64, rng);
  const PatchLabel label{{1, 0, 1}};
  for (HeadMode mode : {HeadMode::kDropoutAttention, HeadMode::kMeanAttention, HeadMode::kPlain}) {
    auto loss_at = [&](const nn::ParameterSet& p, std::vector<float>* g) {
      PdaClassifier copy(3);
      copy.parameters() = p;
      PdaClassifier::Pass pass;
      copy.forward(input, 0.8, mode, pass);
      return multilabel_soft_margin_loss(pass.logits, label, g);
    };
    PdaClassifier::Pass pass;
    model.forward(input, 0.8, mode, pass);
    std::vector<float> gl;
    multilabel_soft_margin_loss(pass.logits, label, &gl);
    nn::Gradients grads(model.parameters());
    model.backward(pass, gl, &grads, nullptr);
    double gnorm2 = grads.norm() * grads.norm();
    ASSERT_GT(gnorm2, 0.0);
    const double h = 1e-3 / std::sqrt(gnorm2);
    nn::ParameterSet plus = model.parameters();
    nn::ParameterSet minus = model.parameters();
    for (int i = 0; i < plus.size(); ++i) {
      for (std::size_t j = 0; j < plus[i].value.size(); ++j) {
        plus[i].value[j] += static_cast<float>(h * grads[i][j]);
        minus[i].value[j] -= static_cast<float>(h * grads[i][j]);
      }
    }
    const double numeric = (loss_at(plus, nullptr) - loss_at(minus, nullptr)) / (2 * h);
    EXPECT_NEAR(numeric / gnorm2, 1.0, 5e-2) << static_cast<int>(mode);
  }
}

TEST(Classifier, SaveLoadRoundTrip) {
  testing::TempDir dir;
  PdaClassifier model(4);
  model.initialize(3);
  model.schedule().mu = 0.7;
  model.normalization().mean = {0.1f, 0.2f, 0.3f};
  const TissueTaxonomy tax = synthetic_taxonomy(4);
  model.save(dir.path(), tax);
  TissueTaxonomy loaded_tax;
  const auto loaded = PdaClassifier::load(dir.path(), &loaded_tax);
  EXPECT_EQ(loaded_tax, tax);
  EXPECT_EQ(loaded->schedule().mu, 0.7);
  EXPECT_EQ(loaded->normalization(), model.normalization());
  EXPECT_EQ(loaded->parameters().all().size(), model.parameters().all().size());
  for (int i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(loaded->parameters()[i].value, model.parameters()[i].value);
  }
  Patch p;
  p.pixels = Tensor(3, 64, 64, 0.5f);
  EXPECT_EQ(loaded->predict_probs(p), model.predict_probs(p));
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg = default_config(DatasetKind::kLuad, 1);
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = 5;
  return cfg;
}

TEST(TrainPhase1, LossDecreasesAndWarmupMuIsOne) {
  const auto train = synthetic_samples(64, 64, 21);
  PdaClassifier model(4);
  model.initialize(1);
  const auto logs = train_phase1(model, train, quick_config(10));
  ASSERT_EQ(logs.size(), 10u);
  EXPECT_LT(logs.back().loss, logs.front().loss);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(logs[e].mu, 1.0);
  EXPECT_DOUBLE_EQ(logs[3].mu, 0.985);
  EXPECT_DOUBLE_EQ(model.schedule().mu, logs.back().mu);
}

TEST(TrainPhase1, PinnedMuMatchesDisabledDropoutBitwise) {
  const auto train = synthetic_samples(24, 64, 22);
  TrainConfig pinned = quick_config(4);
  pinned.pda.constant_mu = 1.0;
  TrainConfig disabled = quick_config(4);
  disabled.pda.enabled = false;

  PdaClassifier a(4);
  a.initialize(2);
  PdaClassifier b(4);
  b.initialize(2);
  const auto la = train_phase1(a, train, pinned);
  const auto lb = train_phase1(b, train, disabled);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t e = 0; e < la.size(); ++e) EXPECT_EQ(la[e].loss, lb[e].loss) << e;
  for (int i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  }
}

TEST(TrainPhase1, RejectsArityMismatch) {
  auto train = synthetic_samples(4, 64, 23);
  PdaClassifier model(3);
  model.initialize(1);
  EXPECT_ERROR_CODE(train_phase1(model, train, quick_config(1)), ErrorCode::kConfigError);
}

}  // namespace
}  // namespace tissueseg
