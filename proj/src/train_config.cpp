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

#include "tissueseg/train_config.hpp"

#include <fstream>

#include "tissueseg/error.hpp"

namespace tissueseg {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kConfigError, what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

void TrainConfig::validate() const {
  require(phase == 1 || phase == 2, "phase must be 1 or 2");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr0 > 0.0, "lr0 must be > 0");
  require(poly_power >= 0.0, "poly power must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(is_probability(aug.hflip_p) && is_probability(aug.vflip_p) &&
              is_probability(aug.blur_p),
          "augmentation probabilities must be in [0,1]");
  require(aug.blur_kernel >= 1 && aug.blur_kernel % 2 == 1, "blur kernel must be odd");
  require(aug.blur_sigma_min > 0.0 && aug.blur_sigma_min <= aug.blur_sigma_max,
          "blur sigma range invalid");
  require(pda.sigma > 0.0 && pda.sigma < 1.0, "pda sigma must be in (0,1)");
  require(pda.lower_bound > 0.0 && pda.lower_bound <= 1.0, "pda lower bound must be in (0,1]");
  require(pda.warmup_epochs >= 0, "warmup must be >= 0");
  if (pda.constant_mu) {
    require(*pda.constant_mu > 0.0 && *pda.constant_mu <= 1.0, "constant mu must be in (0,1]");
  }
  for (double l : lambdas) require(l >= 0.0, "lambdas must be non-negative");
  require(lambdas[0] + lambdas[1] + lambdas[2] > 0.0, "lambda sum must be > 0");
  require(is_probability(eps), "eps must be in [0,1]");
  require(grad_clip >= 0.0, "grad_clip must be non-negative");
  require(tile >= 1 && stride >= 1, "tile and stride must be positive");
  require(2 * stride <= tile, "stride must be <= tile / 2 (at least 50% overlap)");
}

TrainConfig default_config(DatasetKind dataset, int phase) {
  TrainConfig c;
  c.phase = phase;
  if (phase == 1) {
    c.epochs = dataset == DatasetKind::kLuad ? 20 : 40;
    c.batch_size = 20;
    c.lr0 = 1e-2;
  } else {
    c.epochs = 20;
    c.batch_size = 16;
    c.lr0 = 7e-2;
    c.aug.blur = true;
  }
  return c;
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "luad") return DatasetKind::kLuad;
  if (name == "bcss") return DatasetKind::kBcss;
  throw Error(ErrorCode::kConfigError, "unknown dataset " + name);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {
      {"phase", c.phase},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"lr0", c.lr0},
      {"lr_policy", {{"type", "poly"}, {"power", c.poly_power}}},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"aug",
       {{"hflip_p", c.aug.hflip_p},
        {"vflip_p", c.aug.vflip_p},
        {"blur", c.aug.blur},
        {"blur_kernel", c.aug.blur_kernel},
        {"blur_sigma_min", c.aug.blur_sigma_min},
        {"blur_sigma_max", c.aug.blur_sigma_max},
        {"blur_p", c.aug.blur_p},
        {"normalize", c.aug.normalize}}},
      {"pda",
       {{"enabled", c.pda.enabled},
        {"sigma", c.pda.sigma},
        {"lower_bound", c.pda.lower_bound},
        {"warmup_epochs", c.pda.warmup_epochs},
        {"constant_mu", c.pda.constant_mu ? nlohmann::json(*c.pda.constant_mu) : nlohmann::json()}}},
      {"attention", c.attention},
      {"lambdas", c.lambdas},
      {"eps", c.eps},
      {"tile", c.tile},
      {"stride", c.stride},
      {"seed", c.seed},
      {"grad_clip", c.grad_clip},
  };
}

// Missing keys keep their defaults so partial config files are accepted.
void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.phase = j.value("phase", c.phase);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  if (j.contains("lr_policy")) {
    const auto& p = j.at("lr_policy");
    if (p.value("type", std::string("poly")) != "poly") {
      throw Error(ErrorCode::kConfigError, "only the poly lr policy is supported");
    }
    c.poly_power = p.value("power", c.poly_power);
  }
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("aug")) {
    const auto& a = j.at("aug");
    c.aug.hflip_p = a.value("hflip_p", c.aug.hflip_p);
    c.aug.vflip_p = a.value("vflip_p", c.aug.vflip_p);
    c.aug.blur = a.value("blur", c.aug.blur);
    c.aug.blur_kernel = a.value("blur_kernel", c.aug.blur_kernel);
    c.aug.blur_sigma_min = a.value("blur_sigma_min", c.aug.blur_sigma_min);
    c.aug.blur_sigma_max = a.value("blur_sigma_max", c.aug.blur_sigma_max);
    c.aug.blur_p = a.value("blur_p", c.aug.blur_p);
    c.aug.normalize = a.value("normalize", c.aug.normalize);
  }
  if (j.contains("pda")) {
    const auto& p = j.at("pda");
    c.pda.enabled = p.value("enabled", c.pda.enabled);
    c.pda.sigma = p.value("sigma", c.pda.sigma);
    c.pda.lower_bound = p.value("lower_bound", c.pda.lower_bound);
    c.pda.warmup_epochs = p.value("warmup_epochs", c.pda.warmup_epochs);
    if (p.contains("constant_mu") && !p.at("constant_mu").is_null()) {
      c.pda.constant_mu = p.at("constant_mu").get<double>();
    } else {
      c.pda.constant_mu.reset();
    }
  }
  c.attention = j.value("attention", c.attention);
  c.lambdas = j.value("lambdas", c.lambdas);
  c.eps = j.value("eps", c.eps);
  c.tile = j.value("tile", c.tile);
  c.stride = j.value("stride", c.stride);
  c.seed = j.value("seed", c.seed);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  TrainConfig c;
  try {
    from_json(nlohmann::json::parse(in), c);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, path.string());
  out << nlohmann::json(*this).dump(2) << "\n";
}

}  // namespace tissueseg
