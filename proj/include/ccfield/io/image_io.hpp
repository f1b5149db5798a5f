// Copyright 2026 The ccfield Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// 8-bit PNG (via libpng) and 32-bit float PFM images.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ccfield/common.hpp"
#include "ccfield/renderer.hpp"

namespace ccfield::io {

/// Row-major RGBA in [0,1].
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgba;
};

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

namespace detail {

// Writes to a temporary sibling and renames over `path`.
template <typename WriteFn>
void write_atomically(const std::filesystem::path& path, WriteFn&& write) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  write(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot write " + path.string());
  }
}

}  // namespace detail

/// Writes 8-bit RGB, or RGBA when `alpha` is non-empty (one value per pixel).
inline void write_png(const std::filesystem::path& path, const Image& img, const std::vector<float>& alpha = {}) {
  if (!alpha.empty() && alpha.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error("alpha plane does not match the image");
  }
  const int channels = alpha.empty() ? 3 : 4;
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.width) * img.height * channels);
  for (std::size_t p = 0; p < static_cast<std::size_t>(img.width) * img.height; ++p) {
    for (int k = 0; k < 3; ++k) bytes[p * channels + k] = to_byte(img.rgb[p * 3 + k]);
    if (channels == 4) bytes[p * 4 + 3] = to_byte(alpha[p]);
  }
  detail::write_atomically(path, [&](const std::filesystem::path& tmp) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = channels == 4 ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, tmp.c_str(), 0, bytes.data(), 0, nullptr)) {
      const std::string msg = pi.message;
      png_image_free(&pi);
      throw Error("cannot write " + tmp.string() + ": " + msg);
    }
  });
}

/// Reads any PNG as RGBA floats (opaque if there is no alpha).
inline RgbaImage read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("cannot read image " + path.string() + ": " + msg);
  }
  pi.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = pi.message;
    png_image_free(&pi);
    throw Error("cannot read image " + path.string() + ": " + msg);
  }
  RgbaImage out;
  out.width = static_cast<int>(pi.width);
  out.height = static_cast<int>(pi.height);
  out.rgba.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out.rgba[i] = static_cast<float>(bytes[i]) / 255.0f;
  return out;
}

/// rgb * a + background * (1 - a).
inline Image composite_over(const RgbaImage& src, const Vec3& background) {
  Image out(src.width, src.height);
  for (std::size_t p = 0; p < static_cast<std::size_t>(src.width) * src.height; ++p) {
    const float a = src.rgba[p * 4 + 3];
    for (int k = 0; k < 3; ++k) {
      out.rgb[p * 3 + k] = src.rgba[p * 4 + k] * a + static_cast<float>(background[k]) * (1.0f - a);
    }
  }
  return out;
}

/// Little-endian PFM ("PF", negative scale), rows stored bottom-up.
inline void write_pfm(const std::filesystem::path& path, const Image& img) {
  detail::write_atomically(path, [&](const std::filesystem::path& tmp) {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os << "PF\n" << img.width << ' ' << img.height << "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y) {
      os.write(reinterpret_cast<const char*>(img.pixel(0, y)), static_cast<std::streamsize>(img.width) * 3 * 4);
    }
    if (!os) throw Error("write failed: " + tmp.string());
  });
}

inline Image read_pfm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open image " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0;
  is >> magic >> w >> h >> scale;
  is.get();
  if (magic != "PF" || w < 1 || h < 1) throw Error(path.string() + ": not an rgb pfm file");
  if (scale >= 0) throw Error(path.string() + ": big-endian pfm is not supported");
  Image img(w, h);
  for (int y = h - 1; y >= 0; --y) {
    is.read(reinterpret_cast<char*>(img.pixel(0, y)), static_cast<std::streamsize>(w) * 3 * 4);
  }
  if (!is) throw Error(path.string() + ": truncated pfm data");
  return img;
}

/// PNG or PFM by extension.
inline void write_image(const std::filesystem::path& path, const Image& img) {
  if (path.extension() == ".pfm") {
    write_pfm(path, img);
  } else {
    write_png(path, img);
  }
}

inline Image read_image(const std::filesystem::path& path, const Vec3& background = Vec3::Ones()) {
  if (path.extension() == ".pfm") return read_pfm(path);
  return composite_over(read_png(path), background);
}

}  // namespace ccfield::io
