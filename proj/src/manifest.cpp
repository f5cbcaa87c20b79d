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

#include "tissueseg/manifest.hpp"

#include <fstream>
#include <set>

#include "tissueseg/error.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

PatchLabel ManifestRecord::patch_label() const {
  PatchLabel l;
  l.presence.reserve(label.size());
  for (int v : label) l.presence.push_back(v != 0 ? 1 : 0);
  return l;
}

std::vector<const ManifestRecord*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = {{"patch_id", r.patch_id}, {"path", r.path.string()}, {"split", r.split},
       {"label", r.label},       {"slide_id", r.slide_id},  {"origin", r.origin}};
  if (!r.mask_path.empty()) j["mask"] = r.mask_path.string();
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.patch_id = j.at("patch_id").get<std::string>();
  r.path = j.at("path").get<std::string>();
  r.split = j.value("split", std::string("train"));
  r.label = j.value("label", std::vector<int>{});
  r.slide_id = j.value("slide_id", std::string{});
  r.origin = j.value("origin", std::array<int, 2>{0, 0});
  r.mask_path = j.value("mask", std::string{});
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord r;
    try {
      r = nlohmann::json::parse(line).get<ManifestRecord>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (r.path.is_relative()) r.path = base / r.path;
    if (!r.mask_path.empty() && r.mask_path.is_relative()) r.mask_path = base / r.mask_path;
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, path.string());
  const fs::path base = path.parent_path();
  auto relativize = [&](const fs::path& p) {
    if (p.empty() || base.empty()) return p;
    auto rel = p.lexically_relative(base);
    return (rel.empty() || *rel.begin() == "..") ? p : rel;
  };
  for (auto r : manifest.records) {
    r.path = relativize(r.path);
    r.mask_path = relativize(r.mask_path);
    out << nlohmann::json(r).dump() << "\n";
  }
}

Manifest validate_manifest(Manifest manifest, int num_classes) {
  std::set<std::string> ids;
  manifest.split_counts.clear();
  for (const auto& r : manifest.records) {
    if (!ids.insert(r.patch_id).second) {
      throw Error(ErrorCode::kDuplicateId, "patch_id " + r.patch_id);
    }
    if (static_cast<int>(r.label.size()) != num_classes) {
      throw Error(ErrorCode::kLabelArityMismatch,
                  r.patch_id + " has " + std::to_string(r.label.size()) +
                      " label entries, expected " + std::to_string(num_classes));
    }
    if (!fs::exists(r.path)) throw Error(ErrorCode::kMissingFile, r.path.string());
    if (!r.mask_path.empty() && !fs::exists(r.mask_path)) {
      throw Error(ErrorCode::kMissingFile, r.mask_path.string());
    }
    ++manifest.split_counts[r.split];
  }
  return manifest;
}

}  // namespace tissueseg
