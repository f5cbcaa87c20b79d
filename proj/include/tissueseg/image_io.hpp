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

#ifndef TISSUESEG_IMAGE_IO_HPP_
#define TISSUESEG_IMAGE_IO_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tissueseg/tensor.hpp"
#include "tissueseg/types.hpp"

namespace tissueseg {

/// Interleaved 8-bit RGB raster.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // height * width * 3

  Tensor to_tensor() const;  // 3 x H x W in [0,1]
  static RgbImage from_tensor(const Tensor& t);
};

/// (height, width) from the PNG header without decoding pixels.
std::array<int, 2> read_png_size(const std::filesystem::path& path);

RgbImage read_rgb_png(const std::filesystem::path& path);
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image);

Grid<std::uint8_t> read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const Grid<std::uint8_t>& image);

/// Loads an RGB png as a Patch with the given identity fields.
Patch load_patch(const std::filesystem::path& path, std::string patch_id,
                 std::string slide_id = {}, std::array<int, 2> origin = {0, 0});

SegmentationMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const SegmentationMask& mask);

}  // namespace tissueseg

#endif  // TISSUESEG_IMAGE_IO_HPP_
