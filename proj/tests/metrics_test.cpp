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

#include "tissueseg/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_util.hpp"
#include "tissueseg/error.hpp"

namespace tissueseg {
namespace {

SegmentationMask mask_from(int h, int w, const std::vector<int>& labels) {
  SegmentationMask m(h, w);
  for (std::size_t i = 0; i < labels.size(); ++i) m.labels[i] = static_cast<std::uint8_t>(labels[i]);
  return m;
}

TEST(Confusion, HandCountedTwoByTwo) {
  const auto gt = mask_from(2, 2, {0, 0, 1, 1});
  const auto pred = mask_from(2, 2, {0, 1, 1, 1});
  const ConfusionMatrix cm = confusion(gt, pred, 2);
  EXPECT_EQ(cm.counts(), (std::vector<std::int64_t>{1, 1, 0, 2}));
}

TEST(Confusion, IdenticalMasksGiveDiagonal) {
  std::mt19937_64 rng(3);
  SegmentationMask m(17, 13);
  for (auto& v : m.labels.values()) v = static_cast<std::uint8_t>(rng() % 4);
  const ConfusionMatrix cm = confusion(m, m, 4);
  for (int g = 0; g < 4; ++g) {
    for (int p = 0; p < 4; ++p) {
      if (g != p) {
        EXPECT_EQ(cm.at(g, p), 0);
      }
    }
  }
  EXPECT_EQ(cm.total(), 17 * 13);
}

TEST(Confusion, InvalidEverywhereWarnsAndIsEmpty) {
  testing::WarningCollector warnings;
  SegmentationMask gt(3, 3);
  SegmentationMask pred(3, 3);
  std::fill(gt.valid.values().begin(), gt.valid.values().end(), 0);
  const ConfusionMatrix cm = confusion(gt, pred, 2);
  EXPECT_EQ(cm.total(), 0);
  EXPECT_TRUE(warnings.contains("EmptyEvaluation"));
  EXPECT_ERROR_CODE(scores(cm), ErrorCode::kEmptyEvaluation);
}

TEST(Confusion, CountsOnlyPixelsValidInBoth) {
  auto gt = mask_from(1, 4, {0, 1, 1, 0});
  auto pred = mask_from(1, 4, {0, 0, 1, 1});
  gt.valid[1] = 0;
  pred.valid[3] = 0;
  const ConfusionMatrix cm = confusion(gt, pred, 2);
  EXPECT_EQ(cm.counts(), (std::vector<std::int64_t>{1, 0, 0, 1}));
}

TEST(Confusion, ShapeAndTaxonomyErrors) {
  SegmentationMask a(2, 2);
  SegmentationMask b(2, 3);
  EXPECT_ERROR_CODE(confusion(a, b, 2), ErrorCode::kShapeError);
  const auto c = mask_from(2, 2, {0, 5, 0, 0});
  EXPECT_ERROR_CODE(confusion(c, a, 2), ErrorCode::kTaxonomyMismatch);
  const TissueTaxonomy t1({"a", "b"});
  const TissueTaxonomy t2({"a", "c"});
  EXPECT_ERROR_CODE(confusion(a, t1, a, t2), ErrorCode::kTaxonomyMismatch);
}

TEST(Confusion, ParallelMatchesReference) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    SegmentationMask gt(97, 131);
    SegmentationMask pred(97, 131);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      gt.labels[i] = static_cast<std::uint8_t>(rng() % 5);
      pred.labels[i] = static_cast<std::uint8_t>(rng() % 5);
      gt.valid[i] = rng() % 7 != 0;
      pred.valid[i] = rng() % 9 != 0;
    }
    EXPECT_EQ(confusion(gt, pred, 5), reference::confusion(gt, pred, 5));
  }
}

TEST(Scores, WorkedExample) {
  const Scores s = scores(ConfusionMatrix(2, {1, 1, 0, 2}));
  EXPECT_DOUBLE_EQ(s.iou_per_class[0], 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(s.iou_per_class[1], 2.0 / 3.0);
  EXPECT_NEAR(s.miou, 7.0 / 12.0, 1e-15);
  EXPECT_NEAR(s.acc, 3.0 / 4.0, 1e-15);
  EXPECT_NEAR(s.fwiou, 7.0 / 12.0, 1e-15);
  EXPECT_EQ(s.pixels_evaluated, 4);
}

TEST(Scores, PerfectPrediction) {
  const Scores s = scores(ConfusionMatrix(3, {5, 0, 0, 0, 2, 0, 0, 0, 9}));
  for (double v : s.iou_per_class) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(s.miou, 1.0);
  EXPECT_DOUBLE_EQ(s.fwiou, 1.0);
  EXPECT_DOUBLE_EQ(s.acc, 1.0);
}

TEST(Scores, AbsentClassSkippedFromMean) {
  // Class 2 appears in neither gt nor prediction.
  const Scores s = scores(ConfusionMatrix(3, {3, 1, 0, 1, 3, 0, 0, 0, 0}));
  EXPECT_TRUE(std::isnan(s.iou_per_class[2]));
  EXPECT_EQ(s.class_evaluated[2], 0);
  EXPECT_NEAR(s.miou, 0.6, 1e-15);  // both IoUs are 3/5
}

TEST(Scores, FwIouBetweenExtremeIous) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::int64_t> counts(16);
    for (auto& v : counts) v = static_cast<std::int64_t>(rng() % 50);
    counts[0] += 1;
    const Scores s = scores(ConfusionMatrix(4, counts));
    double lo = 1.0;
    double hi = 0.0;
    const ConfusionMatrix cm(4, counts);
    for (int k = 0; k < 4; ++k) {
      if (cm.row_sum(k) == 0) continue;
      lo = std::min(lo, s.iou_per_class[k]);
      hi = std::max(hi, s.iou_per_class[k]);
    }
    EXPECT_LE(s.fwiou, hi + 1e-12);
    EXPECT_GE(s.fwiou, lo - 1e-12);
  }
}

TEST(Scores, ClassPermutationInvariance) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const int c = 2 + static_cast<int>(rng() % 5);
    std::vector<std::int64_t> counts(c * c);
    for (auto& v : counts) v = static_cast<std::int64_t>(rng() % 100);
    counts[0] += 1;
    std::vector<int> perm(c);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::int64_t> permuted(c * c);
    for (int g = 0; g < c; ++g) {
      for (int p = 0; p < c; ++p) permuted[perm[g] * c + perm[p]] = counts[g * c + p];
    }
    const Scores a = scores(ConfusionMatrix(c, counts));
    const Scores b = scores(ConfusionMatrix(c, permuted));
    EXPECT_NEAR(a.miou, b.miou, 1e-12);
    EXPECT_NEAR(a.fwiou, b.fwiou, 1e-12);
    EXPECT_NEAR(a.acc, b.acc, 1e-12);
    for (int k = 0; k < c; ++k) {
      if (a.class_evaluated[k]) {
        EXPECT_NEAR(a.iou_per_class[k], b.iou_per_class[perm[k]], 1e-12);
      }
    }
  }
}

TEST(Scores, ConfusionOfMaskWithItselfIsPerfect) {
  std::mt19937_64 rng(1);
  SegmentationMask m(20, 20);
  for (auto& v : m.labels.values()) v = static_cast<std::uint8_t>(rng() % 3);
  const Scores s = scores(confusion(m, m, 3));
  EXPECT_DOUBLE_EQ(s.miou, 1.0);
  EXPECT_DOUBLE_EQ(s.fwiou, 1.0);
  EXPECT_DOUBLE_EQ(s.acc, 1.0);
}

TEST(Scores, JsonUsesNullForAbsentClasses) {
  const Scores s = scores(ConfusionMatrix(3, {3, 1, 0, 1, 3, 0, 0, 0, 0}));
  const nlohmann::json j = s;
  EXPECT_TRUE(j.at("iou_per_class")[2].is_null());
  EXPECT_DOUBLE_EQ(j.at("miou").get<double>(), 0.6);
}

TEST(WhiteBackground, AllWhiteAllBlackAndHalf) {
  Patch white;
  white.pixels = Tensor(3, 4, 4, 1.0f);
  const auto white_valid = white_background_mask(white);
  for (auto v : white_valid.values()) EXPECT_EQ(v, 0);
  Patch black;
  black.pixels = Tensor(3, 4, 4, 0.0f);
  const auto black_valid = white_background_mask(black);
  for (auto v : black_valid.values()) EXPECT_EQ(v, 1);

  // Left half white, right half pink (1.0, 0.75, 0.8): min channel 0.75.
  Patch half;
  half.pixels = Tensor(3, 6, 8, 1.0f);
  for (int y = 0; y < 6; ++y) {
    for (int x = 4; x < 8; ++x) {
      half.pixels.at(1, y, x) = 0.75f;
      half.pixels.at(2, y, x) = 0.8f;
    }
  }
  const auto valid = white_background_mask(half);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) EXPECT_EQ(valid.at(y, x), x < 4 ? 0 : 1);
  }
}

TEST(WhiteBackground, PolicyNoneLeavesMaskAlone) {
  Patch white;
  white.pixels = Tensor(3, 2, 2, 1.0f);
  SegmentationMask m(2, 2);
  apply_background_policy(m, white, BackgroundPolicy::kNone);
  for (auto v : m.valid.values()) EXPECT_EQ(v, 1);
  apply_background_policy(m, white, BackgroundPolicy::kWhiteThreshold);
  for (auto v : m.valid.values()) EXPECT_EQ(v, 0);
}

}  // namespace
}  // namespace tissueseg
