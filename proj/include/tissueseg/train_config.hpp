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

#ifndef TISSUESEG_TRAIN_CONFIG_HPP_
#define TISSUESEG_TRAIN_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

namespace tissueseg {

enum class DatasetKind { kLuad, kBcss };

struct AugmentConfig {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  bool blur = false;
  int blur_kernel = 5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;
  double blur_p = 0.5;
  bool normalize = true;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PdaConfig {
  // false pins mu to 1 for every epoch (no deactivation).
  bool enabled = true;
  double sigma = 0.985;
  double lower_bound = 0.65;
  int warmup_epochs = 3;
  // Fixed dropout coefficient after warmup instead of the decaying schedule.
  std::optional<double> constant_mu;

  friend bool operator==(const PdaConfig&, const PdaConfig&) = default;
};

struct TrainConfig {
  int phase = 1;
  int epochs = 20;
  int batch_size = 20;
  double lr0 = 1e-2;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  AugmentConfig aug;
  PdaConfig pda;
  // Classifier head: apply the attention map to features before pooling.
  bool attention = true;
  std::array<double, 3> lambdas{0.2, 0.2, 0.6};
  double eps = 0.1;
  int tile = 224;
  int stride = 112;
  std::uint64_t seed = 0;

  /// Throws kConfigError on any violated invariant.
  void validate() const;

  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

TrainConfig default_config(DatasetKind dataset, int phase);
DatasetKind parse_dataset_kind(const std::string& name);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace tissueseg

#endif  // TISSUESEG_TRAIN_CONFIG_HPP_
