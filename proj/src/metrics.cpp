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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tissueseg/error.hpp"
#include "tissueseg/log.hpp"

namespace tissueseg {

ConfusionMatrix::ConfusionMatrix(int num_classes, std::vector<std::int64_t> counts)
    : num_classes_(num_classes), counts_(std::move(counts)) {
  if (counts_.size() != static_cast<std::size_t>(num_classes) * num_classes) {
    throw Error(ErrorCode::kShapeError, "confusion matrix needs c*c counts");
  }
  for (auto v : counts_) {
    if (v < 0) throw Error(ErrorCode::kShapeError, "negative confusion count");
  }
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::row_sum(int k) const {
  std::int64_t s = 0;
  for (int p = 0; p < num_classes_; ++p) s += at(k, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int k) const {
  std::int64_t s = 0;
  for (int g = 0; g < num_classes_; ++g) s += at(g, k);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (num_classes_ == 0) {
    *this = other;
    return *this;
  }
  if (other.num_classes_ != num_classes_) {
    throw Error(ErrorCode::kTaxonomyMismatch, "adding confusion matrices of different size");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

namespace {

void check_pair(const SegmentationMask& gt, const SegmentationMask& pred) {
  if (gt.height() != pred.height() || gt.width() != pred.width()) {
    throw Error(ErrorCode::kShapeError, "ground truth and prediction differ in size");
  }
}

[[noreturn]] void out_of_taxonomy(int label, int num_classes) {
  throw Error(ErrorCode::kTaxonomyMismatch, "label " + std::to_string(label) +
                                                " outside a taxonomy of " +
                                                std::to_string(num_classes) + " classes");
}

void warn_if_empty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) log_warning("EmptyEvaluation: no pixel is valid in both masks");
}

}  // namespace

ConfusionMatrix confusion(const SegmentationMask& gt, const SegmentationMask& pred,
                          int num_classes) {
  check_pair(gt, pred);
  const int h = gt.height();
  const int w = gt.width();
  ConfusionMatrix cm(num_classes);
  int bad = -1;
#pragma omp parallel
  {
    ConfusionMatrix local(num_classes);
    int local_bad = -1;
#pragma omp for schedule(static) nowait
    for (int y = 0; y < h; ++y) {
      const std::size_t row = static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        const std::size_t i = row + x;
        if (!gt.valid[i] || !pred.valid[i]) continue;
        const int g = gt.labels[i];
        const int p = pred.labels[i];
        if (g >= num_classes || p >= num_classes) {
          local_bad = std::max(g, p);
          continue;
        }
        ++local.at(g, p);
      }
    }
#pragma omp critical
    {
      cm += local;
      if (local_bad >= 0) bad = local_bad;
    }
  }
  if (bad >= 0) out_of_taxonomy(bad, num_classes);
  warn_if_empty(cm);
  return cm;
}

ConfusionMatrix confusion(const SegmentationMask& gt, const TissueTaxonomy& gt_taxonomy,
                          const SegmentationMask& pred, const TissueTaxonomy& pred_taxonomy) {
  if (gt_taxonomy.class_names() != pred_taxonomy.class_names()) {
    throw Error(ErrorCode::kTaxonomyMismatch, "ground truth and prediction taxonomies differ");
  }
  return confusion(gt, pred, gt_taxonomy.num_classes());
}

namespace reference {

ConfusionMatrix confusion(const SegmentationMask& gt, const SegmentationMask& pred,
                          int num_classes) {
  check_pair(gt, pred);
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (!gt.valid[i] || !pred.valid[i]) continue;
    const int g = gt.labels[i];
    const int p = pred.labels[i];
    if (g >= num_classes || p >= num_classes) out_of_taxonomy(std::max(g, p), num_classes);
    ++cm.at(g, p);
  }
  warn_if_empty(cm);
  return cm;
}

}  // namespace reference

Scores scores(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw Error(ErrorCode::kEmptyEvaluation, "confusion matrix is empty");
  const int c = cm.num_classes();
  Scores s;
  s.pixels_evaluated = total;
  s.iou_per_class.assign(c, std::numeric_limits<double>::quiet_NaN());
  s.class_evaluated.assign(c, 0);
  double iou_sum = 0.0;
  int evaluated = 0;
  std::int64_t trace = 0;
  for (int k = 0; k < c; ++k) {
    const auto d = cm.at(k, k);
    const auto row = cm.row_sum(k);
    const auto col = cm.col_sum(k);
    trace += d;
    const auto uni = row + col - d;
    if (uni == 0) continue;
    const double iou = static_cast<double>(d) / static_cast<double>(uni);
    s.iou_per_class[k] = iou;
    s.class_evaluated[k] = 1;
    iou_sum += iou;
    ++evaluated;
    s.fwiou += static_cast<double>(row) / static_cast<double>(total) * iou;
  }
  s.miou = iou_sum / evaluated;
  s.acc = static_cast<double>(trace) / static_cast<double>(total);
  return s;
}

void to_json(nlohmann::json& j, const Scores& s) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t k = 0; k < s.iou_per_class.size(); ++k) {
    per.push_back(s.class_evaluated[k] ? nlohmann::json(s.iou_per_class[k]) : nlohmann::json());
  }
  j = {{"iou_per_class", per},
       {"miou", s.miou},
       {"fwiou", s.fwiou},
       {"acc", s.acc},
       {"pixels_evaluated", s.pixels_evaluated}};
}

Grid<std::uint8_t> white_background_mask(const Patch& patch, double threshold) {
  const Tensor& px = patch.pixels;
  if (px.channels() != 3) throw Error(ErrorCode::kShapeError, "RGB patch expected");
  Grid<std::uint8_t> valid(px.height(), px.width(), 1);
  const float t = static_cast<float>(threshold);
  const std::size_t n = valid.size();
  const float* r = px.plane(0).data();
  const float* g = px.plane(1).data();
  const float* b = px.plane(2).data();
  for (std::size_t i = 0; i < n; ++i) {
    valid[i] = std::min({r[i], g[i], b[i]}) > t ? 0 : 1;
  }
  return valid;
}

void apply_background_policy(SegmentationMask& mask, const Patch& patch, BackgroundPolicy policy,
                             double threshold) {
  if (policy != BackgroundPolicy::kWhiteThreshold) return;
  const auto tissue = white_background_mask(patch, threshold);
  if (!tissue.same_shape(mask.height(), mask.width())) {
    throw Error(ErrorCode::kShapeError, "mask and patch differ in size");
  }
  for (std::size_t i = 0; i < tissue.size(); ++i) {
    mask.valid[i] = mask.valid[i] && tissue[i] ? 1 : 0;
  }
}

}  // namespace tissueseg
