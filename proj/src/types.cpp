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

#include "tissueseg/types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "tissueseg/error.hpp"

namespace tissueseg {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile: return "MissingFile";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kLabelArityMismatch: return "LabelArityMismatch";
    case ErrorCode::kShapeError: return "ShapeError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kNumericalError: return "NumericalError";
    case ErrorCode::kEmptyLabel: return "EmptyLabel";
    case ErrorCode::kQuarantined: return "Quarantined";
    case ErrorCode::kEmptyValidRegion: return "EmptyValidRegion";
    case ErrorCode::kMissingPseudoMask: return "MissingPseudoMask";
    case ErrorCode::kAllChannelsClosed: return "AllChannelsClosed";
    case ErrorCode::kExtentTooSmall: return "ExtentTooSmall";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kUncoveredPixel: return "UncoveredPixel";
    case ErrorCode::kTaxonomyMismatch: return "TaxonomyMismatch";
    case ErrorCode::kEmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::kLayoutError: return "LayoutError";
    case ErrorCode::kRoiTooSmall: return "RoiTooSmall";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

TissueTaxonomy::TissueTaxonomy(std::vector<std::string> class_names,
                               BackgroundPolicy policy)
    : class_names_(std::move(class_names)), policy_(policy) {
  if (class_names_.size() < 2) {
    throw Error(ErrorCode::kConfigError, "taxonomy needs at least two classes");
  }
  std::set<std::string> seen;
  for (const auto& name : class_names_) {
    if (name.empty()) throw Error(ErrorCode::kConfigError, "empty class name");
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kConfigError, "duplicate class name " + name);
    }
  }
}

TissueTaxonomy TissueTaxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  try {
    return nlohmann::json::parse(in).get<TissueTaxonomy>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
}

void TissueTaxonomy::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, path.string());
  out << nlohmann::json(*this).dump(2) << "\n";
}

void Patch::validate() const {
  if (pixels.channels() != 3 || pixels.height() < 1 || pixels.width() < 1) {
    throw Error(ErrorCode::kShapeError, "patch must be 3 x H x W with H, W >= 1");
  }
  for (float v : pixels.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorCode::kShapeError, "patch pixel outside [0,1]");
    }
  }
}

int PatchLabel::count_present() const {
  return static_cast<int>(std::count_if(presence.begin(), presence.end(),
                                        [](std::uint8_t v) { return v != 0; }));
}

std::string_view tap_name(Tap tap) {
  switch (tap) {
    case Tap::kB4_3: return "b4_3";
    case Tap::kB5_2: return "b5_2";
    case Tap::kBn7: return "bn7";
  }
  return "bn7";
}

Tap parse_tap(std::string_view name) {
  for (Tap t : kAllTaps) {
    if (tap_name(t) == name) return t;
  }
  throw Error(ErrorCode::kConfigError, "unknown tap " + std::string(name));
}

void PseudoMaskSet::validate(int num_classes, int height, int width) const {
  for (Tap t : kAllTaps) {
    auto it = masks.find(t);
    if (it == masks.end()) {
      throw Error(ErrorCode::kShapeError, "pseudo mask missing tap " + std::string(tap_name(t)));
    }
    if (!it->second.same_shape(height, width)) {
      throw Error(ErrorCode::kShapeError, "pseudo mask not at patch resolution");
    }
    for (auto v : it->second.values()) {
      if (v >= num_classes) throw Error(ErrorCode::kShapeError, "pseudo label out of range");
    }
  }
}

ProbabilityMap ProbabilityMap::all_valid(Tensor probs) {
  ProbabilityMap map;
  map.valid = Grid<std::uint8_t>(probs.height(), probs.width(), 1);
  map.probs = std::move(probs);
  return map;
}

Grid<std::uint8_t> SegmentationMask::to_stored() const {
  Grid<std::uint8_t> out(height(), width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = valid[i] ? labels[i] : kInvalidLabel;
  }
  return out;
}

SegmentationMask SegmentationMask::from_stored(const Grid<std::uint8_t>& stored) {
  SegmentationMask m(stored.height(), stored.width());
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored[i] == kInvalidLabel) {
      m.labels[i] = 0;
      m.valid[i] = 0;
    } else {
      m.labels[i] = stored[i];
      m.valid[i] = 1;
    }
  }
  return m;
}

std::vector<int> classes_present(const SegmentationMask& mask, int num_classes) {
  std::vector<char> seen(num_classes, 0);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.valid[i] && mask.labels[i] < num_classes) seen[mask.labels[i]] = 1;
  }
  std::vector<int> out;
  for (int k = 0; k < num_classes; ++k) {
    if (seen[k]) out.push_back(k);
  }
  return out;
}

namespace {

template <typename T>
nlohmann::json grid_to_json(const Grid<T>& g) {
  return {{"height", g.height()}, {"width", g.width()}, {"data", g.values()}};
}

template <typename T>
Grid<T> grid_from_json(const nlohmann::json& j) {
  Grid<T> g(j.at("height").get<int>(), j.at("width").get<int>());
  auto data = j.at("data").get<std::vector<T>>();
  if (data.size() != g.size()) throw Error(ErrorCode::kParseError, "grid size mismatch");
  g.values() = std::move(data);
  return g;
}

}  // namespace

void to_json(nlohmann::json& j, const TissueTaxonomy& t) {
  j = {{"classes", t.class_names()},
       {"background_policy",
        t.background_policy() == BackgroundPolicy::kWhiteThreshold ? "white_threshold" : "none"}};
}

void from_json(const nlohmann::json& j, TissueTaxonomy& t) {
  BackgroundPolicy policy = BackgroundPolicy::kNone;
  if (j.contains("background_policy")) {
    const auto p = j.at("background_policy").get<std::string>();
    if (p == "white_threshold") {
      policy = BackgroundPolicy::kWhiteThreshold;
    } else if (p != "none") {
      throw Error(ErrorCode::kConfigError, "unknown background_policy " + p);
    }
  }
  t = TissueTaxonomy(j.at("classes").get<std::vector<std::string>>(), policy);
}

void to_json(nlohmann::json& j, const Tensor& t) {
  j = {{"shape", {t.channels(), t.height(), t.width()}}, {"data", t.values()}};
}

void from_json(const nlohmann::json& j, Tensor& t) {
  const auto shape = j.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw Error(ErrorCode::kParseError, "tensor shape must have 3 dims");
  t = Tensor(shape[0], shape[1], shape[2]);
  auto data = j.at("data").get<std::vector<float>>();
  if (data.size() != t.size()) throw Error(ErrorCode::kParseError, "tensor size mismatch");
  t.values() = std::move(data);
}

void to_json(nlohmann::json& j, const Patch& p) {
  j = {{"pixels", p.pixels}, {"slide_id", p.slide_id}, {"origin", p.origin},
       {"patch_id", p.patch_id}};
}

void from_json(const nlohmann::json& j, Patch& p) {
  p.pixels = j.at("pixels").get<Tensor>();
  p.slide_id = j.at("slide_id").get<std::string>();
  p.origin = j.at("origin").get<std::array<int, 2>>();
  p.patch_id = j.at("patch_id").get<std::string>();
}

void to_json(nlohmann::json& j, const PatchLabel& l) { j = l.presence; }

void from_json(const nlohmann::json& j, PatchLabel& l) {
  l.presence = j.get<std::vector<std::uint8_t>>();
  for (auto v : l.presence) {
    if (v > 1) throw Error(ErrorCode::kParseError, "presence entries must be 0 or 1");
  }
}

void to_json(nlohmann::json& j, const CamStack& c) {
  j = {{"tap", tap_name(c.tap)}, {"maps", c.maps}};
}

void from_json(const nlohmann::json& j, CamStack& c) {
  c.tap = parse_tap(j.at("tap").get<std::string>());
  c.maps = j.at("maps").get<Tensor>();
}

void to_json(nlohmann::json& j, const PseudoMaskSet& p) {
  j = {{"patch_id", p.patch_id}, {"masks", nlohmann::json::object()}};
  for (const auto& [tap, mask] : p.masks) j["masks"][std::string(tap_name(tap))] = grid_to_json(mask);
}

void from_json(const nlohmann::json& j, PseudoMaskSet& p) {
  p.patch_id = j.at("patch_id").get<std::string>();
  p.masks.clear();
  for (const auto& [name, mask] : j.at("masks").items()) {
    p.masks[parse_tap(name)] = grid_from_json<std::uint8_t>(mask);
  }
}

void to_json(nlohmann::json& j, const ProbabilityMap& p) {
  j = {{"probs", p.probs}, {"valid", grid_to_json(p.valid)}};
}

void from_json(const nlohmann::json& j, ProbabilityMap& p) {
  p.probs = j.at("probs").get<Tensor>();
  p.valid = grid_from_json<std::uint8_t>(j.at("valid"));
}

void to_json(nlohmann::json& j, const SegmentationMask& m) {
  j = {{"labels", grid_to_json(m.labels)}, {"valid", grid_to_json(m.valid)}};
}

void from_json(const nlohmann::json& j, SegmentationMask& m) {
  m.labels = grid_from_json<std::uint8_t>(j.at("labels"));
  m.valid = grid_from_json<std::uint8_t>(j.at("valid"));
}

}  // namespace tissueseg
