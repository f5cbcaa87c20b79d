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

#include "tissueseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "tissueseg/error.hpp"

namespace tissueseg {
namespace {

// RAII over libpng's simplified API.
struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> read_png(const std::filesystem::path& path,
                                   png_uint_32 format, int& height, int& width) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw Error(std::filesystem::exists(path) ? ErrorCode::kIoError : ErrorCode::kMissingFile,
                path.string() + ": " + png.image.message);
  }
  png.image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIoError, path.string() + ": " + png.image.message);
  }
  height = static_cast<int>(png.image.height);
  width = static_cast<int>(png.image.width);
  return buffer;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, int height,
               int width, const std::uint8_t* data) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorCode::kIoError, path.string() + ": " + png.image.message);
  }
}

}  // namespace

Tensor RgbImage::to_tensor() const {
  Tensor t(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = data[i + c] / 255.0f;
    }
  }
  return t;
}

RgbImage RgbImage::from_tensor(const Tensor& t) {
  if (t.channels() != 3) throw Error(ErrorCode::kShapeError, "RGB tensor needs 3 channels");
  RgbImage img{t.height(), t.width(), {}};
  img.data.resize(static_cast<std::size_t>(t.height()) * t.width() * 3);
  for (int y = 0; y < t.height(); ++y) {
    for (int x = 0; x < t.width(); ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * t.width() + x) * 3;
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        img.data[i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return img;
}

std::array<int, 2> read_png_size(const std::filesystem::path& path) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw Error(std::filesystem::exists(path) ? ErrorCode::kIoError : ErrorCode::kMissingFile,
                path.string() + ": " + png.image.message);
  }
  return {static_cast<int>(png.image.height), static_cast<int>(png.image.width)};
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage img;
  img.data = read_png(path, PNG_FORMAT_RGB, img.height, img.width);
  return img;
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  write_png(path, PNG_FORMAT_RGB, image.height, image.width, image.data.data());
}

std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width);
  png.image.height = static_cast<png_uint_32>(image.height);
  png.image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png.image, nullptr, &size, 0, image.data.data(), 0, nullptr)) {
    throw Error(ErrorCode::kIoError, png.image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png.image, out.data(), &size, 0, image.data.data(), 0,
                                 nullptr)) {
    throw Error(ErrorCode::kIoError, png.image.message);
  }
  out.resize(size);
  return out;
}

Grid<std::uint8_t> read_gray_png(const std::filesystem::path& path) {
  int h = 0;
  int w = 0;
  auto data = read_png(path, PNG_FORMAT_GRAY, h, w);
  Grid<std::uint8_t> g(h, w);
  g.values() = std::move(data);
  return g;
}

void write_gray_png(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
  write_png(path, PNG_FORMAT_GRAY, image.height(), image.width(), image.data());
}

Patch load_patch(const std::filesystem::path& path, std::string patch_id,
                 std::string slide_id, std::array<int, 2> origin) {
  Patch p;
  p.pixels = read_rgb_png(path).to_tensor();
  p.patch_id = std::move(patch_id);
  p.slide_id = std::move(slide_id);
  p.origin = origin;
  return p;
}

SegmentationMask read_mask_png(const std::filesystem::path& path) {
  return SegmentationMask::from_stored(read_gray_png(path));
}

void write_mask_png(const std::filesystem::path& path, const SegmentationMask& mask) {
  write_gray_png(path, mask.to_stored());
}

}  // namespace tissueseg
