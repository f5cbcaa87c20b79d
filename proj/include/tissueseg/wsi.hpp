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

// Whole-slide segmentation by overlapping tiles whose class probabilities
// are averaged per pixel before the argmax.

#ifndef TISSUESEG_WSI_HPP_
#define TISSUESEG_WSI_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "tissueseg/error.hpp"
#include "tissueseg/gate.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

using Origin = std::array<int, 2>;  // (row, col) of the tile's top-left pixel

struct TileGrid {
  int tile_h = 224;
  int tile_w = 224;
  int stride_h = 112;
  int stride_w = 112;
  int rows = 0;
  int cols = 0;

  /// Throws kConfigError unless 1 <= stride <= tile / 2 on both axes, and
  /// kExtentTooSmall when the extent is smaller than a tile.
  void validate() const;
};

/// Tile starts along one axis: 0, stride, 2*stride, ... with the last start
/// moved inward to extent - tile so the edge is covered without padding.
std::vector<int> plan_axis(int extent, int tile, int stride);

/// Row-major list of tile origins covering the grid's extent.
std::vector<Origin> plan_tiles(const TileGrid& grid);

/// Running per-pixel sums of class probabilities and tile counts.
template <typename SumT = float, typename CountT = std::uint16_t>
class ProbabilityAccumulator {
  static_assert(std::is_floating_point_v<SumT>);
  static_assert(std::is_unsigned_v<CountT>);

 public:
  ProbabilityAccumulator(int num_classes, int rows, int cols)
      : c_(num_classes),
        rows_(rows),
        cols_(cols),
        sum_(static_cast<std::size_t>(num_classes) * rows * cols, SumT{0}),
        count_(static_cast<std::size_t>(rows) * cols, CountT{0}) {}

  int num_classes() const { return c_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

  /// Adds a c x h x w probability tile at origin. Throws kShapeError on a
  /// channel mismatch, kOutOfBounds when the window leaves the extent, and
  /// kNumericalError when a pixel count would overflow CountT.
  void accumulate(const Tensor& tile, Origin origin) {
    if (tile.channels() != c_) throw Error(ErrorCode::kShapeError, "tile channel count differs");
    const int y0 = origin[0];
    const int x0 = origin[1];
    const int h = tile.height();
    const int w = tile.width();
    if (y0 < 0 || x0 < 0 || y0 + h > rows_ || x0 + w > cols_) {
      throw Error(ErrorCode::kOutOfBounds, "tile at (" + std::to_string(y0) + "," +
                                               std::to_string(x0) + ") leaves the " +
                                               std::to_string(rows_) + "x" +
                                               std::to_string(cols_) + " extent");
    }
    for (int y = 0; y < h; ++y) {
      const CountT* row = &count_[static_cast<std::size_t>(y0 + y) * cols_ + x0];
      for (int x = 0; x < w; ++x) {
        if (row[x] == std::numeric_limits<CountT>::max()) {
          throw Error(ErrorCode::kNumericalError, "pixel count overflow");
        }
      }
    }
    const std::size_t plane = static_cast<std::size_t>(rows_) * cols_;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
      const std::size_t base = static_cast<std::size_t>(y0 + y) * cols_ + x0;
      for (int k = 0; k < c_; ++k) {
        SumT* dst = &sum_[k * plane + base];
        const float* src = &tile.plane(k)[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x) dst[x] += static_cast<SumT>(src[x]);
      }
      CountT* cnt = &count_[base];
      for (int x = 0; x < w; ++x) ++cnt[x];
    }
  }

  SumT sum(int k, int y, int x) const {
    return sum_[(static_cast<std::size_t>(k) * rows_ + y) * cols_ + x];
  }
  CountT count(int y, int x) const { return count_[static_cast<std::size_t>(y) * cols_ + x]; }
  double mean(int k, int y, int x) const {
    return static_cast<double>(sum(k, y, x)) / static_cast<double>(count(y, x));
  }

  /// Throws kUncoveredPixel if any pixel has a zero count.
  void check_coverage() const {
    for (std::size_t i = 0; i < count_.size(); ++i) {
      if (count_[i] == 0) {
        throw Error(ErrorCode::kUncoveredPixel,
                    "pixel (" + std::to_string(i / cols_) + "," + std::to_string(i % cols_) +
                        ") is covered by no tile");
      }
    }
  }

  /// Mean probabilities and their argmax (ties to the lowest index).
  SegmentationMask finalize(ProbabilityMap* mean_out = nullptr) const {
    check_coverage();
    const std::size_t plane = static_cast<std::size_t>(rows_) * cols_;
    SegmentationMask mask(rows_, cols_);
    Tensor mean;
    if (mean_out != nullptr) mean = Tensor(c_, rows_, cols_);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(plane); ++ii) {
      const std::size_t i = static_cast<std::size_t>(ii);
      const SumT n = static_cast<SumT>(count_[i]);
      int best = 0;
      SumT best_v = sum_[i] / n;
      for (int k = 0; k < c_; ++k) {
        const SumT v = sum_[k * plane + i] / n;
        if (mean_out != nullptr) mean.data()[k * plane + i] = static_cast<float>(v);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      mask.labels[i] = static_cast<std::uint8_t>(best);
    }
    if (mean_out != nullptr) *mean_out = ProbabilityMap::all_valid(std::move(mean));
    return mask;
  }

 private:
  int c_;
  int rows_;
  int cols_;
  std::vector<SumT> sum_;
  std::vector<CountT> count_;
};

namespace reference {

/// Brute force: for every pixel, averages the probabilities of all tiles
/// that cover it. Returns c x rows x cols means in double precision and the
/// covering counts. Used as the oracle for ProbabilityAccumulator.
std::vector<double> covering_mean(const std::vector<Tensor>& tiles,
                                  const std::vector<Origin>& origins, int rows, int cols,
                                  std::vector<int>* counts = nullptr);

}  // namespace reference

struct WsiOptions {
  int tile = 224;
  int stride = 112;
  GateOptions gate;
  // 64-bit sums instead of 32-bit, for very large slides.
  bool double_sums = false;
  // Tiles run through the networks together per batch.
  int batch = 16;
};

struct WsiReport {
  int tiles = 0;
  int tile = 0;    // 0 when tiles come from a directory
  int stride = 0;  // 0 when tiles come from a directory
  double eps = 0.0;
  bool gate = true;
  int rows = 0;
  int cols = 0;
  int gate_fallbacks = 0;
  double runtime_s = 0.0;
};

void to_json(nlohmann::json& j, const WsiReport& r);

struct WsiResult {
  SegmentationMask mask;
  ProbabilityMap mean;
  WsiReport report;
};

/// Segments a flat 3 x H x W slide in [0,1].
WsiResult segment_slide(const Tensor& slide, const Segmenter& segmenter,
                        const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                        const WsiOptions& options = {});

/// A tile directory holds PNG tiles and origins.jsonl lines
/// {"path": "<file>", "origin": [row, col]}. Each listed tile is segmented
/// as-is at its origin; the extent is the union of all tiles, which must
/// cover it completely.
WsiResult segment_tile_directory(const std::filesystem::path& dir, const Segmenter& segmenter,
                                 const PdaClassifier& classifier, const TissueTaxonomy& taxonomy,
                                 const WsiOptions& options = {});

/// Writes mask.png, report.json and, when requested, one grayscale
/// probability raster per class (prob_<class>.png, value * 255).
void write_wsi_outputs(const std::filesystem::path& out_dir, const WsiResult& result,
                       const TissueTaxonomy& taxonomy, bool write_probabilities);

}  // namespace tissueseg

#endif  // TISSUESEG_WSI_HPP_
