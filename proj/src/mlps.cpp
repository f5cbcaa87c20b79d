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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tissueseg/backbone.hpp"
#include "tissueseg/error.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/kernels.hpp"
#include "tissueseg/parallel.hpp"
#include "tissueseg/pseudomask.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

void MlpsLossConfig::validate() const {
  double sum = 0.0;
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw Error(ErrorCode::kConfigError, "loss weights must be finite and non-negative");
    }
    sum += l;
  }
  if (sum <= 0.0) throw Error(ErrorCode::kConfigError, "at least one loss weight must be positive");
}

double mlps_loss(const Tensor& logits, const PseudoMaskSet& pseudo, const MlpsLossConfig& cfg,
                 Tensor* grad) {
  cfg.validate();
  const int c = logits.channels();
  const int h = logits.height();
  const int w = logits.width();
  const std::size_t n = static_cast<std::size_t>(h) * w;

  // Active taps with their per-pixel weight lambda / N_valid.
  struct Term {
    const std::uint8_t* labels;
    double weight;
  };
  std::vector<Term> terms;
  for (Tap tap : kAllTaps) {
    const double lambda = cfg.lambda(tap);
    if (lambda == 0.0) continue;
    auto it = pseudo.masks.find(tap);
    if (it == pseudo.masks.end()) {
      throw Error(ErrorCode::kMissingPseudoMask,
                  std::string(tap_name(tap)) + " target missing for " + pseudo.patch_id);
    }
    const Grid<std::uint8_t>& mask = it->second;
    if (!mask.same_shape(h, w)) {
      throw Error(ErrorCode::kShapeError, std::string(tap_name(tap)) + " target is " +
                                              std::to_string(mask.height()) + "x" +
                                              std::to_string(mask.width()) + ", logits are " +
                                              std::to_string(h) + "x" + std::to_string(w));
    }
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t v = mask[i];
      if (v == kInvalidLabel) continue;
      if (v >= c) {
        throw Error(ErrorCode::kShapeError, "label " + std::to_string(v) + " outside " +
                                                std::to_string(c) + " classes");
      }
      ++valid;
    }
    if (valid == 0) {
      throw Error(ErrorCode::kEmptyValidRegion,
                  std::string(tap_name(tap)) + " target of " + pseudo.patch_id + " has no valid pixel");
    }
    terms.push_back({mask.data(), lambda / static_cast<double>(valid)});
  }

  if (grad != nullptr && !grad->same_shape(logits)) *grad = Tensor(c, h, w);
  const float* z = logits.data();
  double loss = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : loss)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
    const std::size_t p = static_cast<std::size_t>(pi);
    double mx = z[p];
    for (int k = 1; k < c; ++k) mx = std::max(mx, static_cast<double>(z[k * n + p]));
    double sum = 0.0;
    for (int k = 0; k < c; ++k) sum += std::exp(z[k * n + p] - mx);
    const double lse = mx + std::log(sum);
    double pixel_weight = 0.0;
    for (const Term& t : terms) {
      const std::uint8_t label = t.labels[p];
      if (label == kInvalidLabel) continue;
      loss += t.weight * (lse - z[label * n + p]);
      pixel_weight += t.weight;
    }
    if (grad == nullptr) continue;
    float* g = grad->data();
    for (int k = 0; k < c; ++k) {
      g[k * n + p] = static_cast<float>(pixel_weight * std::exp(z[k * n + p] - lse));
    }
    for (const Term& t : terms) {
      const std::uint8_t label = t.labels[p];
      if (label != kInvalidLabel) g[label * n + p] -= static_cast<float>(t.weight);
    }
  }
  return loss;
}

namespace {

constexpr int kStemChannels = 16;
constexpr int kDeepChannels = 48;
constexpr int kFuseChannels = 32;

}  // namespace

Segmenter::Segmenter(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 2) throw Error(ErrorCode::kConfigError, "segmenter needs at least 2 classes");
  using kernels::ConvGeometry;
  enc_.emplace_back(params_, "enc.stem", ConvGeometry{3, kStemChannels, 4, 4, 0, 1});
  enc_.emplace_back(params_, "enc.down", ConvGeometry{kStemChannels, 32, 2, 2, 0, 1});
  enc_.emplace_back(params_, "enc.block1", ConvGeometry{32, 32, 3, 1, 1, 1});
  enc_.emplace_back(params_, "enc.block2", ConvGeometry{32, kDeepChannels, 3, 1, 2, 2});
  fuse_ = nn::Conv2d(params_, "dec.fuse",
                     ConvGeometry{kDeepChannels + kStemChannels, kFuseChannels, 1, 1, 0, 1});
  cls_ = nn::Conv2d(params_, "dec.classifier", ConvGeometry{kFuseChannels, num_classes, 1, 1, 0, 1});
}

void Segmenter::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& conv : enc_) conv.initialize(params_, rng);
  fuse_.initialize(params_, rng);
  cls_.initialize(params_, rng);
}

// acts: 0 input, 1 stem, 2 down, 3 block1, 4 block2, 5 concat, 6 fuse,
// 7 low-resolution logits.
Tensor Segmenter::forward(const Tensor& input, Trace& trace) const {
  if (input.height() < kMinInputExtent || input.width() < kMinInputExtent) {
    throw Error(ErrorCode::kShapeError, "segmenter input smaller than " +
                                            std::to_string(kMinInputExtent) + " pixels");
  }
  trace.in_h = input.height();
  trace.in_w = input.width();
  trace.acts.assign(8, Tensor());
  trace.acts[0] = input;
  for (int i = 0; i < 4; ++i) {
    enc_[i].forward(params_, trace.acts[i], trace.acts[i + 1]);
    kernels::relu_inplace(trace.acts[i + 1]);
  }
  const Tensor& stem = trace.acts[1];
  Tensor up;
  kernels::resize_bilinear(trace.acts[4], stem.height(), stem.width(), up);
  Tensor& cat = trace.acts[5];
  cat = Tensor(kDeepChannels + kStemChannels, stem.height(), stem.width());
  std::copy(up.values().begin(), up.values().end(), cat.values().begin());
  std::copy(stem.values().begin(), stem.values().end(),
            cat.values().begin() + static_cast<std::ptrdiff_t>(up.size()));
  fuse_.forward(params_, cat, trace.acts[6]);
  kernels::relu_inplace(trace.acts[6]);
  cls_.forward(params_, trace.acts[6], trace.acts[7]);
  Tensor logits;
  kernels::resize_bilinear(trace.acts[7], trace.in_h, trace.in_w, logits);
  return logits;
}

void Segmenter::backward(const Trace& trace, const Tensor& grad_logits,
                         nn::Gradients& grads) const {
  const Tensor& low = trace.acts[7];
  Tensor g7;
  kernels::resize_bilinear_backward(grad_logits, low.height(), low.width(), g7);
  Tensor g6;
  cls_.backward(params_, trace.acts[6], g7, &g6, grads);
  kernels::relu_backward(trace.acts[6], g6);
  Tensor g5;
  fuse_.backward(params_, trace.acts[5], g6, &g5, grads);

  const Tensor& stem = trace.acts[1];
  const Tensor& deep = trace.acts[4];
  Tensor g_up(kDeepChannels, stem.height(), stem.width());
  std::copy(g5.values().begin(), g5.values().begin() + static_cast<std::ptrdiff_t>(g_up.size()),
            g_up.values().begin());
  Tensor g;
  kernels::resize_bilinear_backward(g_up, deep.height(), deep.width(), g);
  for (int i = 3; i >= 1; --i) {
    kernels::relu_backward(trace.acts[i + 1], g);
    Tensor g_in;
    enc_[i].backward(params_, trace.acts[i], g, &g_in, grads);
    g = std::move(g_in);
  }
  const float* skip = g5.data() + g_up.size();
  for (std::size_t j = 0; j < g.size(); ++j) g.data()[j] += skip[j];
  kernels::relu_backward(stem, g);
  enc_[0].backward(params_, trace.acts[0], g, nullptr, grads);
}

Tensor Segmenter::predict_probs(const Patch& patch) const {
  Trace trace;
  const Tensor logits = forward(norm_.apply(patch.pixels), trace);
  Tensor probs;
  kernels::softmax_channels(logits, probs);
  return probs;
}

void Segmenter::save(const fs::path& dir, const TissueTaxonomy& taxonomy,
                     nlohmann::json extra) const {
  extra["kind"] = "segmenter";
  extra["architecture"] = "mlps_segmenter_v1";
  extra["num_classes"] = num_classes_;
  extra["taxonomy"] = taxonomy;
  extra["normalization"] = norm_;
  nn::save_checkpoint(dir, params_, std::move(extra));
}

std::unique_ptr<Segmenter> Segmenter::load(const fs::path& dir, TissueTaxonomy* taxonomy) {
  std::ifstream in(dir / "metadata.json");
  if (!in) throw Error(ErrorCode::kMissingFile, (dir / "metadata.json").string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.value("kind", std::string{}) != "segmenter") {
    throw Error(ErrorCode::kConfigError, dir.string() + " is not a segmenter checkpoint");
  }
  auto model = std::make_unique<Segmenter>(meta.at("num_classes").get<int>());
  nn::load_checkpoint(dir, model->params_);
  model->norm_ = meta.at("normalization").get<NormalizationStats>();
  if (taxonomy != nullptr) *taxonomy = meta.at("taxonomy").get<TissueTaxonomy>();
  return model;
}

std::vector<Phase2Sample> load_phase2_samples(const Manifest& manifest, const fs::path& pseudo_dir,
                                              const MlpsLossConfig& loss) {
  loss.validate();
  std::vector<Tap> taps;
  for (Tap tap : kAllTaps) {
    if (loss.lambda(tap) > 0.0) taps.push_back(tap);
  }
  const auto records = manifest.split("train");
  std::vector<Phase2Sample> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const ManifestRecord& r = *records[i];
    out[i].patch = load_patch(r.path, r.patch_id, r.slide_id, r.origin);
    out[i].targets = load_pseudo_masks(pseudo_dir, r.patch_id, taps);
    for (const auto& [tap, mask] : out[i].targets.masks) {
      if (!mask.same_shape(out[i].patch.height(), out[i].patch.width())) {
        throw Error(ErrorCode::kShapeError,
                    std::string(tap_name(tap)) + " mask of " + r.patch_id + " differs in size");
      }
    }
  });
  return out;
}

PseudoMaskSet supervised_targets(const SegmentationMask& mask, const std::string& patch_id) {
  PseudoMaskSet out;
  out.patch_id = patch_id;
  out.masks[Tap::kBn7] = mask.to_stored();
  return out;
}

void augment_pair(const AugmentDraw& draw, const AugmentConfig& cfg, Tensor& image,
                  PseudoMaskSet& targets) {
  image = augment_image(image, draw, cfg);
  if (!draw.hflip && !draw.vflip) return;
  for (auto& [tap, mask] : targets.masks) mask = flip(mask, draw.hflip, draw.vflip);
}

void to_json(nlohmann::json& j, const Phase2EpochLog& log) {
  j = {{"epoch", log.epoch}, {"loss", log.loss}, {"lr", log.lr}};
}

std::vector<Phase2EpochLog> train_phase2(
    Segmenter& model, const std::vector<Phase2Sample>& train, const TrainConfig& config,
    const std::function<void(const Phase2EpochLog&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::kConfigError, "empty training set");
  MlpsLossConfig loss_cfg;
  loss_cfg.lambdas = config.lambdas;
  loss_cfg.validate();

  std::vector<const Tensor*> images;
  for (const auto& s : train) images.push_back(&s.patch.pixels);
  model.normalization() =
      config.aug.normalize ? NormalizationStats::compute(images) : NormalizationStats{};
  const NormalizationStats norm = model.normalization();

  nn::SgdMomentum optimizer(model.parameters(), config.momentum, config.weight_decay);
  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const long iters_per_epoch = static_cast<long>((n + batch - 1) / batch);
  const long total_iters = iters_per_epoch * config.epochs;
  long iter = 0;

  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<nn::Gradients> sample_grads(batch, nn::Gradients(model.parameters()));
  nn::Gradients total(model.parameters());
  std::vector<double> sample_loss(batch);

  std::vector<Phase2EpochLog> logs;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    double lr = config.lr0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const Phase2Sample& s = train[idx];
        auto rng = sample_rng(config.seed, epoch, idx);
        const AugmentDraw draw = draw_augment(config.aug, rng);
        Tensor image = s.patch.pixels;
        PseudoMaskSet targets = s.targets;
        augment_pair(draw, config.aug, image, targets);
        Segmenter::Trace trace;
        const Tensor logits = model.forward(norm.apply(image), trace);
        Tensor grad;
        sample_loss[b] = mlps_loss(logits, targets, loss_cfg, &grad);
        sample_grads[b].zero();
        model.backward(trace, grad, sample_grads[b]);
      });
      total.zero();
      for (std::size_t b = 0; b < count; ++b) {
        total.add(sample_grads[b]);
        loss_sum += sample_loss[b];
      }
      total.scale(1.0f / static_cast<float>(count));
      if (config.grad_clip > 0.0) {
        const double g = total.norm();
        if (g > config.grad_clip) total.scale(static_cast<float>(config.grad_clip / g));
      }
      lr = nn::poly_lr(config.lr0, iter, total_iters, config.poly_power);
      optimizer.step(model.parameters(), total, lr);
      ++iter;
    }
    for (const auto& p : model.parameters().all()) {
      for (float v : p.value) {
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::kNumericalError, "non-finite parameter " + p.name);
        }
      }
    }
    Phase2EpochLog log{epoch, loss_sum / static_cast<double>(n), lr};
    if (on_epoch) on_epoch(log);
    logs.push_back(log);
  }
  return logs;
}

}  // namespace tissueseg
