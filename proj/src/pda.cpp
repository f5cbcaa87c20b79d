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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "tissueseg/error.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

PdaSchedule step_schedule(PdaSchedule sched, int epoch) {
  if (epoch < sched.warmup_epochs) {
    sched.mu = 1.0;
    return sched;
  }
  const double next = sched.sigma * sched.mu;
  sched.mu = next > sched.lower_bound ? next : sched.lower_bound;
  return sched;
}

CamStack class_activation_maps(const Tensor& features, const ClassifierHead& head, Tap tap) {
  if (features.channels() != head.channels) {
    throw Error(ErrorCode::kShapeError,
                "feature channels " + std::to_string(features.channels()) +
                    " != head width " + std::to_string(head.channels));
  }
  CamStack out;
  out.tap = tap;
  out.maps = Tensor(head.num_classes, features.height(), features.width());
  const int n = features.plane_size();
#pragma omp parallel for schedule(static)
  for (int k = 0; k < head.num_classes; ++k) {
    float* dst = out.maps.plane(k).data();
    for (int ch = 0; ch < head.channels; ++ch) {
      const float w = head.weight(k, ch);
      const float* src = features.plane(ch).data();
      for (int i = 0; i < n; ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

DeactivatedCams dropout_deactivate(const CamStack& cams, double mu) {
  if (!(mu > 0.0 && mu <= 1.0)) {
    throw Error(ErrorCode::kConfigError, "dropout coefficient must be in (0, 1]");
  }
  const int c = cams.maps.channels();
  const int h = cams.maps.height();
  const int w = cams.maps.width();
  const int n = h * w;
  DeactivatedCams out;
  out.cams.tap = cams.tap;
  out.cams.maps = Tensor(c, h, w);
  out.cutoffs.assign(c, 0.0f);
  out.keep.assign(static_cast<std::size_t>(c) * n, 0);
  out.attention = Grid<float>(h, w, 0.0f);
  const float coef = static_cast<float>(mu);

#pragma omp parallel for schedule(static)
  for (int k = 0; k < c; ++k) {
    auto src = cams.maps.plane(k);
    float mx = -std::numeric_limits<float>::infinity();
    for (float v : src) mx = std::max(mx, v);
    const float beta = coef * mx;
    out.cutoffs[k] = beta;
    auto dst = out.cams.maps.plane(k);
    std::uint8_t* keep = out.keep.data() + static_cast<std::size_t>(k) * n;
    for (int i = 0; i < n; ++i) {
      const bool kept = src[i] <= beta;
      keep[i] = kept ? 1 : 0;
      dst[i] = kept ? src[i] : 0.0f;
    }
  }
  const float denom = static_cast<float>(c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (int k = 0; k < c; ++k) acc += out.cams.maps.data()[static_cast<std::size_t>(k) * n + i];
    out.attention[i] = acc / denom;
  }
  return out;
}

Grid<float> mean_attention(const CamStack& cams) {
  const int c = cams.maps.channels();
  const int n = cams.maps.plane_size();
  Grid<float> a(cams.maps.height(), cams.maps.width(), 0.0f);
  const float denom = static_cast<float>(c);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (int k = 0; k < c; ++k) acc += cams.maps.data()[static_cast<std::size_t>(k) * n + i];
    a[i] = acc / denom;
  }
  return a;
}

Tensor apply_attention(const Tensor& features, const Grid<float>& attention) {
  if (!attention.same_shape(features.height(), features.width())) {
    throw Error(ErrorCode::kShapeError, "attention map does not match feature size");
  }
  Tensor out(features.channels(), features.height(), features.width());
  const int n = features.plane_size();
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < features.channels(); ++ch) {
    const float* src = features.plane(ch).data();
    float* dst = out.plane(ch).data();
    for (int i = 0; i < n; ++i) dst[i] = attention[i] * src[i];
  }
  return out;
}

std::vector<float> global_average_pool(const Tensor& features) {
  std::vector<float> out(features.channels());
  const int n = features.plane_size();
  for (int ch = 0; ch < features.channels(); ++ch) {
    double acc = 0.0;
    for (float v : features.plane(ch)) acc += v;
    out[ch] = static_cast<float>(acc / n);
  }
  return out;
}

namespace {

std::vector<float> head_apply(std::span<const float> pooled, const ClassifierHead& head) {
  std::vector<float> logits(head.num_classes);
  for (int k = 0; k < head.num_classes; ++k) {
    float acc = head.bias.empty() ? 0.0f : head.bias[k];
    for (int ch = 0; ch < head.channels; ++ch) acc += head.weight(k, ch) * pooled[ch];
    logits[k] = acc;
  }
  return logits;
}

}  // namespace

std::vector<float> predict_logits(const Tensor& attended, const ClassifierHead& head) {
  if (attended.channels() != head.channels) {
    throw Error(ErrorCode::kShapeError, "attended features do not match head width");
  }
  return head_apply(global_average_pool(attended), head);
}

std::vector<float> sigmoid(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logits[i]))));
  }
  return out;
}

double multilabel_soft_margin_loss(std::span<const float> logits, const PatchLabel& label,
                                   std::vector<float>* grad) {
  if (static_cast<int>(logits.size()) != label.num_classes()) {
    throw Error(ErrorCode::kShapeError, "logit count != label arity");
  }
  const double c = static_cast<double>(logits.size());
  double loss = 0.0;
  if (grad != nullptr) grad->assign(logits.size(), 0.0f);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double x = logits[k];
    const double y = label.presence[k] ? 1.0 : 0.0;
    // log(1 + exp(-|x|)) + max(x, 0) - x*y, the stable form of BCE.
    loss += std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0) - x * y;
    if (grad != nullptr) {
      const double p = 1.0 / (1.0 + std::exp(-x));
      (*grad)[k] = static_cast<float>((p - y) / c);
    }
  }
  return loss / c;
}

PdaClassifier::PdaClassifier(int num_classes, bool attention)
    : num_classes_(num_classes), attention_(attention) {
  if (num_classes < 2) throw Error(ErrorCode::kConfigError, "need at least two classes");
  backbone_ = std::make_unique<SmallBackbone>(params_, "backbone.");
  const int width = backbone_->tap_spec().channels_of(Tap::kBn7);
  head_weight_ = params_.add("head.weight", {num_classes, width});
  head_bias_ = params_.add("head.bias", {num_classes}, false);
}

void PdaClassifier::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  backbone_->initialize(params_, rng);
  const int width = backbone_->tap_spec().channels_of(Tap::kBn7);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  for (auto& w : params_[head_weight_].value) w = static_cast<float>(dist(rng));
  std::fill(params_[head_bias_].value.begin(), params_[head_bias_].value.end(), 0.0f);
  schedule_.mu = 1.0;
}

ClassifierHead PdaClassifier::head() const {
  ClassifierHead h;
  h.num_classes = num_classes_;
  h.channels = backbone_->tap_spec().channels_of(Tap::kBn7);
  h.weights = params_[head_weight_].value;
  h.bias = params_[head_bias_].value;
  return h;
}

void PdaClassifier::set_head(const ClassifierHead& head) {
  if (head.num_classes != num_classes_ ||
      head.weights.size() != params_[head_weight_].value.size() ||
      head.bias.size() != params_[head_bias_].value.size()) {
    throw Error(ErrorCode::kShapeError, "head shape mismatch");
  }
  params_[head_weight_].value = head.weights;
  params_[head_bias_].value = head.bias;
}

void PdaClassifier::forward(const Tensor& input, double mu, HeadMode mode, Pass& pass) const {
  pass.mode = mode;
  backbone_->forward(params_, input, pass.trace);
  const Tensor& m = backbone_->tap(pass.trace, Tap::kBn7);
  const ClassifierHead h = head();
  switch (mode) {
    case HeadMode::kPlain:
      pass.pooled = global_average_pool(m);
      break;
    case HeadMode::kDropoutAttention:
      pass.cams = class_activation_maps(m, h);
      pass.dropout = dropout_deactivate(pass.cams, mu);
      pass.attention = pass.dropout.attention;
      pass.attended = apply_attention(m, pass.attention);
      pass.pooled = global_average_pool(pass.attended);
      break;
    case HeadMode::kMeanAttention:
      pass.cams = class_activation_maps(m, h);
      pass.attention = mean_attention(pass.cams);
      pass.attended = apply_attention(m, pass.attention);
      pass.pooled = global_average_pool(pass.attended);
      break;
  }
  pass.logits = head_apply(pass.pooled, h);
}

void PdaClassifier::backward(const Pass& pass, std::span<const float> grad_logits,
                             nn::Gradients* grads, std::map<Tap, Tensor>* tap_grads) const {
  const Tensor& m = backbone_->tap(pass.trace, Tap::kBn7);
  const int width = m.channels();
  const int n = m.plane_size();
  const int c = num_classes_;
  const auto& w = params_[head_weight_].value;

  std::vector<float> grad_pooled(width, 0.0f);
  for (int k = 0; k < c; ++k) {
    for (int ch = 0; ch < width; ++ch) {
      grad_pooled[ch] += grad_logits[k] * w[static_cast<std::size_t>(k) * width + ch];
    }
  }
  if (grads != nullptr) {
    auto gw = (*grads)[head_weight_];
    auto gb = (*grads)[head_bias_];
    for (int k = 0; k < c; ++k) {
      gb[k] += grad_logits[k];
      for (int ch = 0; ch < width; ++ch) {
        gw[static_cast<std::size_t>(k) * width + ch] += grad_logits[k] * pass.pooled[ch];
      }
    }
  }

  Tensor grad_m(width, m.height(), m.width());
  const float inv_n = 1.0f / static_cast<float>(n);
  if (pass.mode == HeadMode::kPlain) {
    for (int ch = 0; ch < width; ++ch) {
      const float g = grad_pooled[ch] * inv_n;
      for (float& v : grad_m.plane(ch)) v = g;
    }
  } else {
    // Through m~ = A * m.
    std::vector<float> grad_a(n, 0.0f);
    for (int ch = 0; ch < width; ++ch) {
      const float g = grad_pooled[ch] * inv_n;
      const float* src = m.plane(ch).data();
      float* dst = grad_m.plane(ch).data();
      for (int i = 0; i < n; ++i) {
        grad_a[i] += g * src[i];
        dst[i] = g * pass.attention[i];
      }
    }
    // Through A = (1/c) sum_k keep_k * M_k; the keep mask is held constant.
    const float inv_c = 1.0f / static_cast<float>(c);
    Tensor grad_cam(c, m.height(), m.width());
    for (int k = 0; k < c; ++k) {
      float* dst = grad_cam.plane(k).data();
      const std::uint8_t* keep =
          pass.mode == HeadMode::kDropoutAttention
              ? pass.dropout.keep.data() + static_cast<std::size_t>(k) * n
              : nullptr;
      for (int i = 0; i < n; ++i) {
        const float g = grad_a[i] * inv_c;
        dst[i] = keep != nullptr ? g * static_cast<float>(keep[i]) : g;
      }
    }
    // Through M_k = w_k . m.
    for (int k = 0; k < c; ++k) {
      const float* gk = grad_cam.plane(k).data();
      for (int ch = 0; ch < width; ++ch) {
        const float wk = w[static_cast<std::size_t>(k) * width + ch];
        const float* src = m.plane(ch).data();
        float* dst = grad_m.plane(ch).data();
        float acc = 0.0f;
        for (int i = 0; i < n; ++i) {
          acc += gk[i] * src[i];
          dst[i] += gk[i] * wk;
        }
        if (grads != nullptr) (*grads)[head_weight_][static_cast<std::size_t>(k) * width + ch] += acc;
      }
    }
  }
  backbone_->backward(params_, pass.trace, grad_m, grads, tap_grads);
}

std::vector<float> PdaClassifier::predict_probs(const Patch& patch) const {
  Pass pass;
  forward(norm_.apply(patch.pixels), schedule_.mu, eval_mode(), pass);
  return sigmoid(pass.logits);
}

void PdaClassifier::save(const std::filesystem::path& dir, const TissueTaxonomy& taxonomy,
                         nlohmann::json extra) const {
  const auto& spec = backbone_->tap_spec();
  nlohmann::json taps = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.taps.size(); ++i) {
    taps.push_back({{"name", tap_name(spec.taps[i])},
                    {"stride", spec.strides[i]},
                    {"channels", spec.channels[i]}});
  }
  extra["kind"] = "pda_classifier";
  extra["backbone"] = backbone_->name();
  extra["num_classes"] = num_classes_;
  extra["taxonomy"] = taxonomy;
  extra["attention"] = attention_;
  extra["tap_spec"] = taps;
  extra["normalization"] = norm_;
  extra["schedule"] = {{"sigma", schedule_.sigma},
                       {"lower_bound", schedule_.lower_bound},
                       {"warmup_epochs", schedule_.warmup_epochs},
                       {"mu", schedule_.mu}};
  nn::save_checkpoint(dir, params_, std::move(extra));
}

std::unique_ptr<PdaClassifier> PdaClassifier::load(const std::filesystem::path& dir,
                                                   TissueTaxonomy* taxonomy) {
  std::ifstream in(dir / "metadata.json");
  if (!in) throw Error(ErrorCode::kMissingFile, (dir / "metadata.json").string());
  const auto meta = nlohmann::json::parse(in);
  if (meta.value("kind", std::string{}) != "pda_classifier") {
    throw Error(ErrorCode::kConfigError, dir.string() + " is not a classifier checkpoint");
  }
  auto model = std::make_unique<PdaClassifier>(meta.at("num_classes").get<int>(),
                                               meta.value("attention", true));
  nn::load_checkpoint(dir, model->params_);
  model->norm_ = meta.at("normalization").get<NormalizationStats>();
  const auto& s = meta.at("schedule");
  model->schedule_ = {s.at("sigma").get<double>(), s.at("lower_bound").get<double>(),
                      s.at("warmup_epochs").get<int>(), s.at("mu").get<double>()};
  if (taxonomy != nullptr) *taxonomy = meta.at("taxonomy").get<TissueTaxonomy>();
  return model;
}

void to_json(nlohmann::json& j, const Phase1EpochLog& log) {
  j = {{"epoch", log.epoch},
       {"loss", log.loss},
       {"mu", log.mu},
       {"acc_per_class", log.acc_per_class},
       {"acc_exact", log.acc_exact}};
}

std::vector<Phase1EpochLog> train_phase1(
    PdaClassifier& model, const std::vector<Sample>& train, const TrainConfig& config,
    const std::function<void(const Phase1EpochLog&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::kConfigError, "empty training set");
  const int c = model.num_classes();
  for (const auto& s : train) {
    if (s.label.num_classes() != c) {
      throw Error(ErrorCode::kConfigError,
                  s.patch.patch_id + ": label arity " + std::to_string(s.label.num_classes()) +
                      " != model classes " + std::to_string(c));
    }
  }
  model.normalization() =
      config.aug.normalize ? NormalizationStats::compute(train) : NormalizationStats{};
  const NormalizationStats norm = model.normalization();

  PdaSchedule sched{config.pda.sigma, config.pda.lower_bound, config.pda.warmup_epochs, 1.0};
  HeadMode mode = HeadMode::kPlain;
  if (model.uses_attention()) {
    mode = config.pda.enabled ? HeadMode::kDropoutAttention : HeadMode::kMeanAttention;
  }

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
  std::vector<std::vector<std::uint8_t>> sample_correct(batch);

  std::vector<Phase1EpochLog> logs;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double mu = 1.0;
    if (config.pda.enabled) {
      if (config.pda.constant_mu) {
        mu = epoch < config.pda.warmup_epochs ? 1.0 : *config.pda.constant_mu;
      } else {
        sched = step_schedule(sched, epoch);
        mu = sched.mu;
      }
    }
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::vector<double> correct(c, 0.0);
    double exact = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      parallel_for(count, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        const Sample& s = train[idx];
        auto rng = sample_rng(config.seed, epoch, idx);
        const AugmentDraw draw = draw_augment(config.aug, rng);
        const Tensor input = norm.apply(augment_image(s.patch.pixels, draw, config.aug));
        PdaClassifier::Pass pass;
        model.forward(input, mu, mode, pass);
        std::vector<float> grad;
        sample_loss[b] = multilabel_soft_margin_loss(pass.logits, s.label, &grad);
        sample_correct[b].assign(c, 0);
        for (int k = 0; k < c; ++k) {
          sample_correct[b][k] = (pass.logits[k] > 0.0f) == s.label.is_present(k) ? 1 : 0;
        }
        sample_grads[b].zero();
        model.backward(pass, grad, &sample_grads[b], nullptr);
      });
      total.zero();
      for (std::size_t b = 0; b < count; ++b) {
        total.add(sample_grads[b]);
        loss_sum += sample_loss[b];
        bool all = true;
        for (int k = 0; k < c; ++k) {
          correct[k] += sample_correct[b][k];
          all = all && sample_correct[b][k];
        }
        exact += all ? 1.0 : 0.0;
      }
      total.scale(1.0f / static_cast<float>(count));
      if (config.grad_clip > 0.0) {
        const double norm = total.norm();
        if (norm > config.grad_clip) total.scale(static_cast<float>(config.grad_clip / norm));
      }
      optimizer.step(model.parameters(),
                     total, nn::poly_lr(config.lr0, iter, total_iters, config.poly_power));
      ++iter;
    }
    for (const auto& p : model.parameters().all()) {
      for (float v : p.value) {
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::kNumericalError, "non-finite parameter " + p.name);
        }
      }
    }

    Phase1EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(n);
    log.mu = mu;
    for (int k = 0; k < c; ++k) log.acc_per_class.push_back(correct[k] / static_cast<double>(n));
    log.acc_exact = exact / static_cast<double>(n);
    if (on_epoch) on_epoch(log);
    logs.push_back(std::move(log));
  }
  model.schedule() = sched;
  model.schedule().mu = logs.back().mu;
  return logs;
}

ClassificationAccuracy evaluate_classifier(const PdaClassifier& model,
                                           const std::vector<Sample>& samples) {
  const int c = model.num_classes();
  std::vector<std::vector<float>> probs(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    probs[i] = model.predict_probs(samples[i].patch);
  });
  ClassificationAccuracy acc;
  acc.per_class.assign(c, 0.0);
  double exact = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool all = true;
    for (int k = 0; k < c; ++k) {
      const bool ok = (probs[i][k] > 0.5f) == samples[i].label.is_present(k);
      acc.per_class[k] += ok ? 1.0 : 0.0;
      all = all && ok;
    }
    exact += all ? 1.0 : 0.0;
  }
  if (!samples.empty()) {
    for (auto& v : acc.per_class) v /= static_cast<double>(samples.size());
    acc.exact = exact / static_cast<double>(samples.size());
    acc.mean_per_class = std::accumulate(acc.per_class.begin(), acc.per_class.end(), 0.0) / c;
  }
  return acc;
}

}  // namespace tissueseg
