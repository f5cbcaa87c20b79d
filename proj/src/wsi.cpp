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

#include "tissueseg/wsi.hpp"

#include <chrono>
#include <fstream>
#include <variant>

#include "tissueseg/image_io.hpp"
#include "tissueseg/metrics.hpp"
#include "tissueseg/parallel.hpp"

namespace tissueseg {

namespace fs = std::filesystem;

void TileGrid::validate() const {
  if (tile_h < 1 || tile_w < 1) throw Error(ErrorCode::kConfigError, "tile size must be positive");
  if (stride_h < 1 || stride_w < 1 || stride_h > tile_h / 2 || stride_w > tile_w / 2) {
    throw Error(ErrorCode::kConfigError,
                "stride must be between 1 and half the tile size (at least 50% overlap)");
  }
  if (rows < tile_h || cols < tile_w) {
    throw Error(ErrorCode::kExtentTooSmall, "extent " + std::to_string(rows) + "x" +
                                                std::to_string(cols) + " is smaller than a " +
                                                std::to_string(tile_h) + "x" +
                                                std::to_string(tile_w) + " tile");
  }
}

std::vector<int> plan_axis(int extent, int tile, int stride) {
  if (extent < tile) {
    throw Error(ErrorCode::kExtentTooSmall,
                "extent " + std::to_string(extent) + " below tile " + std::to_string(tile));
  }
  if (stride < 1) throw Error(ErrorCode::kConfigError, "stride must be positive");
  std::vector<int> starts;
  for (int s = 0;; s += stride) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

std::vector<Origin> plan_tiles(const TileGrid& grid) {
  grid.validate();
  std::vector<Origin> out;
  const auto ys = plan_axis(grid.rows, grid.tile_h, grid.stride_h);
  const auto xs = plan_axis(grid.cols, grid.tile_w, grid.stride_w);
  for (int y : ys) {
    for (int x : xs) out.push_back({y, x});
  }
  return out;
}

namespace reference {

std::vector<double> covering_mean(const std::vector<Tensor>& tiles,
                                  const std::vector<Origin>& origins, int rows, int cols,
                                  std::vector<int>* counts) {
  if (tiles.size() != origins.size() || tiles.empty()) {
    throw Error(ErrorCode::kShapeError, "one origin per tile required");
  }
  const int c = tiles.front().channels();
  std::vector<double> mean(static_cast<std::size_t>(c) * rows * cols, 0.0);
  if (counts != nullptr) counts->assign(static_cast<std::size_t>(rows) * cols, 0);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      std::vector<double> acc(c, 0.0);
      int n = 0;
      for (std::size_t t = 0; t < tiles.size(); ++t) {
        const int ty = y - origins[t][0];
        const int tx = x - origins[t][1];
        if (ty < 0 || tx < 0 || ty >= tiles[t].height() || tx >= tiles[t].width()) continue;
        for (int k = 0; k < c; ++k) acc[k] += tiles[t].at(k, ty, tx);
        ++n;
      }
      if (counts != nullptr) (*counts)[static_cast<std::size_t>(y) * cols + x] = n;
      for (int k = 0; k < c; ++k) {
        mean[(static_cast<std::size_t>(k) * rows + y) * cols + x] = n > 0 ? acc[k] / n : 0.0;
      }
    }
  }
  return mean;
}

}  // namespace reference

void to_json(nlohmann::json& j, const WsiReport& r) {
  // Tile-directory runs have no planned grid; tile and stride are then null.
  auto positive_or_null = [](int v) { return v > 0 ? nlohmann::json(v) : nlohmann::json(); };
  j = {{"tiles", r.tiles},           {"tile", positive_or_null(r.tile)},
       {"stride", positive_or_null(r.stride)}, {"eps", r.eps},
       {"gate", r.gate},             {"rows", r.rows},
       {"cols", r.cols},             {"gate_fallbacks", r.gate_fallbacks},
       {"runtime_s", r.runtime_s}};
}

namespace {

using Accumulator = std::variant<ProbabilityAccumulator<float>, ProbabilityAccumulator<double>>;

Accumulator make_accumulator(bool double_sums, int c, int rows, int cols) {
  if (double_sums) return ProbabilityAccumulator<double>(c, rows, cols);
  return ProbabilityAccumulator<float>(c, rows, cols);
}

void check_models(const Segmenter& segmenter, const PdaClassifier& classifier,
                  const TissueTaxonomy& taxonomy) {
  const int c = segmenter.num_classes();
  if (classifier.num_classes() != c || taxonomy.num_classes() != c) {
    throw Error(ErrorCode::kTaxonomyMismatch, "segmenter, classifier and taxonomy differ in classes");
  }
}

// Runs the patch pipeline up to the gated probability map.
Tensor tile_probs(const Patch& tile, const Segmenter& segmenter, const PdaClassifier& classifier,
                  const GateOptions& gate, bool* fell_back) {
  const auto class_probs = classifier.predict_probs(tile);
  auto probs = gate_or_fallback(ProbabilityMap::all_valid(segmenter.predict_probs(tile)),
                                class_probs, gate, tile.patch_id, fell_back);
  return std::move(probs.probs);
}

// Processes tiles in batches: inference in parallel, accumulation serial in
// tile order so results do not depend on the schedule.
template <typename LoadTile>
void run_tiles(std::size_t count, int batch, const LoadTile& load, const Segmenter& segmenter,
               const PdaClassifier& classifier, const GateOptions& gate, Accumulator& acc,
               const std::function<void(const Patch&)>& on_tile, WsiReport& report) {
  const std::size_t step = static_cast<std::size_t>(std::max(batch, 1));
  for (std::size_t start = 0; start < count; start += step) {
    const std::size_t n = std::min(step, count - start);
    std::vector<Patch> tiles(n);
    std::vector<Tensor> probs(n);
    std::vector<std::uint8_t> fell_back(n, 0);
    parallel_for(n, [&](std::size_t i) {
      tiles[i] = load(start + i);
      bool fb = false;
      probs[i] = tile_probs(tiles[i], segmenter, classifier, gate, &fb);
      fell_back[i] = fb ? 1 : 0;
    });
    for (std::size_t i = 0; i < n; ++i) {
      std::visit([&](auto& a) { a.accumulate(probs[i], tiles[i].origin); }, acc);
      if (on_tile) on_tile(tiles[i]);
      report.gate_fallbacks += fell_back[i];
      ++report.tiles;
    }
  }
}

WsiReport base_report(const WsiOptions& options) {
  WsiReport r;
  r.tile = options.tile;
  r.stride = options.stride;
  r.eps = options.gate.epsilon;
  r.gate = options.gate.enabled;
  return r;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

WsiResult segment_slide(const Tensor& slide, const Segmenter& segmenter,
                        const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                        const WsiOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  check_models(segmenter, classifier, taxonomy);
  if (slide.channels() != 3) throw Error(ErrorCode::kShapeError, "RGB slide expected");
  TileGrid grid{options.tile, options.tile, options.stride, options.stride, slide.height(),
                slide.width()};
  const auto origins = plan_tiles(grid);
  const int c = segmenter.num_classes();
  Accumulator acc = make_accumulator(options.double_sums, c, slide.height(), slide.width());

  WsiResult result;
  result.report = base_report(options);
  result.report.rows = slide.height();
  result.report.cols = slide.width();
  auto load = [&](std::size_t i) {
    Patch p;
    p.origin = origins[i];
    p.patch_id = "tile-" + std::to_string(origins[i][0]) + "-" + std::to_string(origins[i][1]);
    p.pixels = crop(slide, origins[i][0], origins[i][1], options.tile, options.tile);
    return p;
  };
  run_tiles(origins.size(), options.batch, load, segmenter, classifier, options.gate, acc, {},
            result.report);
  result.mask = std::visit([&](auto& a) { return a.finalize(&result.mean); }, acc);
  if (taxonomy.background_policy() != BackgroundPolicy::kNone) {
    Patch whole;
    whole.pixels = slide;
    apply_background_policy(result.mask, whole, taxonomy.background_policy());
  }
  result.report.runtime_s = seconds_since(t0);
  return result;
}

WsiResult segment_tile_directory(const fs::path& dir, const Segmenter& segmenter,
                                 const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                                 const WsiOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  check_models(segmenter, classifier, taxonomy);
  std::ifstream in(dir / "origins.jsonl");
  if (!in) throw Error(ErrorCode::kMissingFile, (dir / "origins.jsonl").string());
  struct Entry {
    fs::path path;
    Origin origin;
    std::array<int, 2> size;
  };
  std::vector<Entry> entries;
  int rows = 0;
  int cols = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Entry e;
    try {
      const auto j = nlohmann::json::parse(line);
      e.path = dir / j.at("path").get<std::string>();
      e.origin = j.at("origin").get<Origin>();
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kParseError,
                  "origins.jsonl line " + std::to_string(line_no) + ": " + ex.what());
    }
    if (e.origin[0] < 0 || e.origin[1] < 0) {
      throw Error(ErrorCode::kOutOfBounds, "negative origin on line " + std::to_string(line_no));
    }
    e.size = read_png_size(e.path);
    rows = std::max(rows, e.origin[0] + e.size[0]);
    cols = std::max(cols, e.origin[1] + e.size[1]);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw Error(ErrorCode::kExtentTooSmall, "tile directory lists no tile");

  Accumulator acc = make_accumulator(options.double_sums, segmenter.num_classes(), rows, cols);
  const bool white = taxonomy.background_policy() == BackgroundPolicy::kWhiteThreshold;
  Grid<std::uint8_t> tissue(white ? rows : 0, white ? cols : 0, 1);

  WsiResult result;
  result.report = base_report(options);
  result.report.tile = 0;
  result.report.stride = 0;
  result.report.rows = rows;
  result.report.cols = cols;
  auto load = [&](std::size_t i) {
    return load_patch(entries[i].path, entries[i].path.stem().string(), dir.filename().string(),
                      entries[i].origin);
  };
  auto mark_background = [&](const Patch& tile) {
    if (!white) return;
    const auto valid = white_background_mask(tile);
    for (int y = 0; y < valid.height(); ++y) {
      for (int x = 0; x < valid.width(); ++x) {
        if (!valid.at(y, x)) tissue.at(tile.origin[0] + y, tile.origin[1] + x) = 0;
      }
    }
  };
  run_tiles(entries.size(), options.batch, load, segmenter, classifier, options.gate, acc,
            mark_background, result.report);
  result.mask = std::visit([&](auto& a) { return a.finalize(&result.mean); }, acc);
  if (white) {
    for (std::size_t i = 0; i < tissue.size(); ++i) {
      result.mask.valid[i] = result.mask.valid[i] && tissue[i] ? 1 : 0;
    }
  }
  result.report.runtime_s = seconds_since(t0);
  return result;
}

void write_wsi_outputs(const fs::path& out_dir, const WsiResult& result,
                       const TissueTaxonomy& taxonomy, bool write_probabilities) {
  fs::create_directories(out_dir);
  write_mask_png(out_dir / "mask.png", result.mask);
  if (write_probabilities) {
    const Tensor& mean = result.mean.probs;
    for (int k = 0; k < mean.channels(); ++k) {
      Grid<std::uint8_t> raster(mean.height(), mean.width());
      auto plane = mean.plane(k);
      for (std::size_t i = 0; i < raster.size(); ++i) {
        raster[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(plane[i], 0.0f, 1.0f) * 255.0f));
      }
      write_gray_png(out_dir / ("prob_" + taxonomy.class_names().at(k) + ".png"), raster);
    }
  }
  std::ofstream report(out_dir / "report.json");
  if (!report) throw Error(ErrorCode::kIoError, "cannot write " + (out_dir / "report.json").string());
  report << nlohmann::json(result.report).dump(2) << "\n";
}

}  // namespace tissueseg
