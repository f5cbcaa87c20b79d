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

#include "tissueseg/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "tissueseg/error.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool parse_int(std::string_view s, int* out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

void check_mask_range(const SegmentationMask& mask, int num_classes, const fs::path& path) {
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.valid[i] && mask.labels[i] >= num_classes) {
      throw Error(ErrorCode::kLayoutError,
                  path.string() + ": class index " + std::to_string(mask.labels[i]) +
                      " outside taxonomy of " + std::to_string(num_classes));
    }
  }
}

std::vector<int> to_ints(const PatchLabel& label) {
  return {label.presence.begin(), label.presence.end()};
}

}  // namespace

PatchLabel label_from_mask(const SegmentationMask& mask, int num_classes, double min_fraction) {
  std::vector<long> counts(num_classes, 0);
  long valid = 0;
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (!mask.valid[i]) continue;
    ++valid;
    if (mask.labels[i] < num_classes) ++counts[mask.labels[i]];
  }
  PatchLabel label;
  label.presence.assign(num_classes, 0);
  for (int k = 0; k < num_classes; ++k) {
    label.presence[k] =
        counts[k] > 0 && static_cast<double>(counts[k]) >= min_fraction * valid ? 1 : 0;
  }
  return label;
}

bool parse_labeled_filename(const std::string& filename, std::string* patch_id,
                            std::vector<int>* label) {
  std::string stem = fs::path(filename).stem().string();
  const auto open = stem.rfind("-[");
  if (open == std::string::npos || stem.back() != ']') return false;
  std::istringstream body(stem.substr(open + 2, stem.size() - open - 3));
  std::vector<int> values;
  std::string token;
  while (body >> token) {
    int v = 0;
    if (!parse_int(token, &v) || (v != 0 && v != 1)) return false;
    values.push_back(v);
  }
  if (values.empty()) return false;
  *patch_id = stem.substr(0, open);
  *label = std::move(values);
  return true;
}

std::string labeled_filename(const std::string& patch_id, const std::vector<int>& label) {
  std::string out = patch_id + "-[";
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(label[i]);
  }
  return out + "].png";
}

void parse_provenance(const std::string& patch_id, std::string* slide_id,
                      std::array<int, 2>* origin) {
  const auto last = patch_id.rfind('-');
  if (last != std::string::npos && last > 0) {
    const auto mid = patch_id.rfind('-', last - 1);
    int row = 0;
    int col = 0;
    if (mid != std::string::npos && mid > 0 &&
        parse_int(std::string_view(patch_id).substr(mid + 1, last - mid - 1), &row) &&
        parse_int(std::string_view(patch_id).substr(last + 1), &col)) {
      *slide_id = patch_id.substr(0, mid);
      *origin = {row, col};
      return;
    }
  }
  *slide_id = patch_id;
  *origin = {0, 0};
}

Manifest load_luad_layout(const fs::path& root, int num_classes, double min_fraction) {
  const fs::path train_dir = root / "train";
  if (!fs::is_directory(train_dir)) {
    throw Error(ErrorCode::kLayoutError, train_dir.string() + " is not a directory");
  }
  Manifest manifest;

  // Sidecar labels take precedence over file-name labels.
  std::map<std::string, std::vector<int>> sidecar;
  if (fs::exists(train_dir / "labels.jsonl")) {
    std::ifstream in(train_dir / "labels.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        sidecar[j.at("patch_id").get<std::string>()] = j.at("label").get<std::vector<int>>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kLayoutError, "labels.jsonl: " + std::string(e.what()));
      }
    }
  }

  for (const auto& path : png_files(train_dir)) {
    ManifestRecord r;
    r.split = "train";
    r.path = path;
    std::vector<int> label;
    if (!parse_labeled_filename(path.filename().string(), &r.patch_id, &label)) {
      r.patch_id = path.stem().string();
    }
    if (auto it = sidecar.find(r.patch_id); it != sidecar.end()) label = it->second;
    if (label.empty()) {
      throw Error(ErrorCode::kLayoutError, path.string() + " has no label");
    }
    if (static_cast<int>(label.size()) != num_classes) {
      throw Error(ErrorCode::kLabelArityMismatch,
                  r.patch_id + " has " + std::to_string(label.size()) + " label entries");
    }
    if (std::all_of(label.begin(), label.end(), [](int v) { return v == 0; })) {
      throw Error(ErrorCode::kEmptyLabel, r.patch_id + " has no present class");
    }
    r.label = std::move(label);
    parse_provenance(r.patch_id, &r.slide_id, &r.origin);
    const fs::path mask = root / "train_mask" / (r.patch_id + ".png");
    if (fs::exists(mask)) r.mask_path = mask;
    manifest.records.push_back(std::move(r));
  }

  for (const std::string split : {"val", "test"}) {
    const fs::path dir = root / split;
    if (!fs::exists(dir)) continue;
    if (!fs::is_directory(dir / "img") || !fs::is_directory(dir / "mask")) {
      throw Error(ErrorCode::kLayoutError, dir.string() + " needs img/ and mask/");
    }
    const auto images = png_files(dir / "img");
    std::vector<ManifestRecord> records(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
      const fs::path& img = images[i];
      const fs::path mask_path = dir / "mask" / img.filename();
      if (!fs::exists(mask_path)) {
        throw Error(ErrorCode::kLayoutError, "no mask for " + img.string());
      }
      const SegmentationMask mask = read_mask_png(mask_path);
      check_mask_range(mask, num_classes, mask_path);
      ManifestRecord& r = records[i];
      r.split = split;
      r.path = img;
      r.mask_path = mask_path;
      r.patch_id = img.stem().string();
      r.label = to_ints(label_from_mask(mask, num_classes, min_fraction));
      parse_provenance(r.patch_id, &r.slide_id, &r.origin);
    });
    for (auto& r : records) manifest.records.push_back(std::move(r));
  }
  return validate_manifest(std::move(manifest), num_classes);
}

std::vector<WeakCrop> synthesize_weak_from_pixel(const Tensor& roi, const SegmentationMask& roi_mask,
                                                 int num_classes, int patch_size,
                                                 int samples_per_roi, std::uint64_t seed,
                                                 double min_fraction) {
  if (!roi_mask.labels.same_shape(roi.height(), roi.width())) {
    throw Error(ErrorCode::kShapeError, "region image and mask differ in size");
  }
  if (roi.height() < patch_size || roi.width() < patch_size) {
    throw Error(ErrorCode::kRoiTooSmall,
                "region " + std::to_string(roi.height()) + "x" + std::to_string(roi.width()) +
                    " is smaller than crop " + std::to_string(patch_size));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ys(0, roi.height() - patch_size);
  std::uniform_int_distribution<int> xs(0, roi.width() - patch_size);
  std::vector<WeakCrop> out;
  out.reserve(samples_per_roi);
  for (int i = 0; i < samples_per_roi; ++i) {
    WeakCrop crop_out;
    const int y = ys(rng);
    const int x = xs(rng);
    crop_out.origin = {y, x};
    crop_out.pixels = crop(roi, y, x, patch_size, patch_size);
    crop_out.mask.labels = crop(roi_mask.labels, y, x, patch_size, patch_size);
    crop_out.mask.valid = crop(roi_mask.valid, y, x, patch_size, patch_size);
    crop_out.label = label_from_mask(crop_out.mask, num_classes, min_fraction);
    out.push_back(std::move(crop_out));
  }
  return out;
}

ManifestRecord write_luad_patch(const fs::path& root, const std::string& split,
                                const std::string& patch_id, const Tensor& pixels,
                                const SegmentationMask* mask, const PatchLabel& label) {
  ManifestRecord r;
  r.patch_id = patch_id;
  r.split = split;
  r.label = to_ints(label);
  parse_provenance(patch_id, &r.slide_id, &r.origin);
  if (split == "train") {
    fs::create_directories(root / "train");
    r.path = root / "train" / labeled_filename(patch_id, r.label);
    if (mask != nullptr) {
      fs::create_directories(root / "train_mask");
      r.mask_path = root / "train_mask" / (patch_id + ".png");
    }
  } else {
    fs::create_directories(root / split / "img");
    fs::create_directories(root / split / "mask");
    r.path = root / split / "img" / (patch_id + ".png");
    if (mask == nullptr) throw Error(ErrorCode::kLayoutError, split + " patches need a mask");
    r.mask_path = root / split / "mask" / (patch_id + ".png");
  }
  write_rgb_png(r.path, RgbImage::from_tensor(pixels));
  if (mask != nullptr) write_mask_png(r.mask_path, *mask);
  return r;
}

Manifest synthesize_bcss(const fs::path& bcss_root, const fs::path& out_root, int num_classes,
                         const BcssSynthesisOptions& options) {
  const fs::path roi_dir = bcss_root / "rois";
  const fs::path mask_dir = bcss_root / "masks";
  if (!fs::is_directory(roi_dir) || !fs::is_directory(mask_dir)) {
    throw Error(ErrorCode::kLayoutError, bcss_root.string() + " needs rois/ and masks/");
  }
  const auto rois = png_files(roi_dir);
  if (rois.empty()) throw Error(ErrorCode::kLayoutError, "no regions under " + roi_dir.string());

  // Region-level split assignment.
  std::vector<std::size_t> order(rois.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 split_rng(options.seed);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n = static_cast<double>(rois.size());
  const auto n_test = static_cast<std::size_t>(std::floor(options.test_fraction * n));
  const auto n_val = static_cast<std::size_t>(std::floor(options.val_fraction * n));
  std::vector<std::string> split_of(rois.size(), "train");
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_test) {
      split_of[order[i]] = "test";
    } else if (i < n_test + n_val) {
      split_of[order[i]] = "val";
    }
  }

  std::vector<std::vector<ManifestRecord>> per_roi(rois.size());
  parallel_for(rois.size(), [&](std::size_t i) {
    const fs::path mask_path = mask_dir / rois[i].filename();
    if (!fs::exists(mask_path)) throw Error(ErrorCode::kLayoutError, "no mask for " + rois[i].string());
    const Tensor roi = read_rgb_png(rois[i]).to_tensor();
    const SegmentationMask mask = read_mask_png(mask_path);
    check_mask_range(mask, num_classes, mask_path);
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed),
                      static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 derive(seq);
    const auto crops = synthesize_weak_from_pixel(roi, mask, num_classes, options.patch_size,
                                                  options.samples_per_roi, derive(),
                                                  options.min_fraction);
    const std::string stem = rois[i].stem().string();
    for (const auto& c : crops) {
      if (c.label.count_present() == 0) continue;  // fully invalid crop
      const std::string id =
          stem + "-" + std::to_string(c.origin[0]) + "-" + std::to_string(c.origin[1]);
      // Identical origins can repeat within a region; keep the first.
      bool dup = false;
      for (const auto& r : per_roi[i]) dup = dup || r.patch_id == id;
      if (dup) continue;
      per_roi[i].push_back(write_luad_patch(out_root, split_of[i], id, c.pixels, &c.mask, c.label));
    }
  });

  Manifest manifest;
  for (auto& records : per_roi) {
    for (auto& r : records) manifest.records.push_back(std::move(r));
  }
  manifest = validate_manifest(std::move(manifest), num_classes);
  write_manifest(manifest, out_root / "manifest.jsonl");
  return manifest;
}

}  // namespace tissueseg
