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

#ifndef TISSUESEG_MANIFEST_HPP_
#define TISSUESEG_MANIFEST_HPP_

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

/// One line of a dataset manifest (JSON-lines).
struct ManifestRecord {
  std::string patch_id;
  std::filesystem::path path;
  std::string split;  // "train", "val" or "test"
  std::vector<int> label;
  std::string slide_id;
  std::array<int, 2> origin{0, 0};
  // Pixel mask for evaluation splits; empty for weakly labeled patches.
  std::filesystem::path mask_path;

  PatchLabel patch_label() const;
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  // Filled by validate_manifest.
  std::map<std::string, int> split_counts;

  std::vector<const ManifestRecord*> split(const std::string& name) const;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

/// Relative paths are resolved against base_dir.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Checks file existence, id uniqueness and label arity; fills split_counts.
/// Throws kMissingFile, kDuplicateId or kLabelArityMismatch.
Manifest validate_manifest(Manifest manifest, int num_classes);

}  // namespace tissueseg

#endif  // TISSUESEG_MANIFEST_HPP_
