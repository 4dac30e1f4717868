/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Binary PGM (P5) / PPM (P6) images, maxval 255. Tensors are planar
// [C, H, W] in [0,1]; PPM pixels are interleaved RGB on disk.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gradleak/harness/dataset.hpp"
#include "gradleak/tensor.hpp"

namespace gradleak {

/// Clamps to [0,1] and rounds half up: 0.5 -> 128.
inline unsigned char to_byte(double v) {
  const double c = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 1.0);
  return static_cast<unsigned char>(std::floor(c * 255.0 + 0.5));
}

/// Encodes planar pixels (channels 1 or 3) as a P5/P6 byte string.
inline std::string encode_pnm(std::span<const double> pixels, std::size_t channels,
                              std::size_t height, std::size_t width) {
  if (channels != 1 && channels != 3) throw Error("PNM output needs 1 or 3 channels, got " + std::to_string(channels));
  if (pixels.size() != channels * height * width || pixels.empty()) {
    throw ShapeError("PNM output: " + std::to_string(pixels.size()) + " values for " +
                     std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  std::string out = (channels == 1 ? "P5\n" : "P6\n") + std::to_string(width) + " " +
                    std::to_string(height) + "\n255\n";
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < channels; ++c) out.push_back(static_cast<char>(to_byte(pixels[c * plane + i])));
  return out;
}

inline void write_image(std::span<const double> pixels, std::size_t channels, std::size_t height,
                        std::size_t width, const std::string& path) {
  const std::string bytes = encode_pnm(pixels, channels, height, width);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write '" + path + "'");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed for '" + path + "'");
}

/// Writes a [C, H, W] tensor.
inline void write_image(const Tensor& image, const std::string& path) {
  if (image.rank() != 3) throw ShapeError("write_image expects [C, H, W], got " + shape_str(image.shape()));
  write_image(image.data(), image.dim(0), image.dim(1), image.dim(2), path);
}

struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  Tensor pixels;  // [C, H, W]
};

namespace detail {

// Next whitespace-delimited header token, skipping '#' comments.
inline std::string pnm_token(const std::string& b, std::size_t& pos, const std::string& path) {
  while (pos < b.size()) {
    if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
  if (start == pos) throw Error("'" + path + "': truncated PNM header at byte " + std::to_string(pos));
  return b.substr(start, pos - start);
}

inline std::size_t pnm_number(const std::string& tok, const std::string& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw Error("'" + path + "': bad PNM header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace detail

inline Image decode_pnm(const std::string& bytes, const std::string& path = "<memory>") {
  std::size_t pos = 0;
  const std::string magic = detail::pnm_token(bytes, pos, path);
  if (magic != "P5" && magic != "P6") throw Error("'" + path + "': not a binary PGM/PPM (magic '" + magic + "')");
  Image img;
  img.channels = magic == "P5" ? 1 : 3;
  img.width = detail::pnm_number(detail::pnm_token(bytes, pos, path), path);
  img.height = detail::pnm_number(detail::pnm_token(bytes, pos, path), path);
  const std::size_t maxval = detail::pnm_number(detail::pnm_token(bytes, pos, path), path);
  if (img.width == 0 || img.height == 0) throw Error("'" + path + "': empty image");
  if (maxval == 0 || maxval > 255) throw Error("'" + path + "': unsupported maxval " + std::to_string(maxval));
  ++pos;  // single whitespace byte before the raster
  const std::size_t plane = img.width * img.height;
  const std::size_t need = pos + plane * img.channels;
  if (bytes.size() < need) {
    throw Error("'" + path + "' truncated at byte " + std::to_string(bytes.size()) + ", expected " +
                std::to_string(need) + " bytes");
  }
  img.pixels = Tensor({img.channels, img.height, img.width});
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < img.channels; ++c) {
      const auto byte = static_cast<unsigned char>(bytes[pos + i * img.channels + c]);
      img.pixels[c * plane + i] = static_cast<double>(byte) / static_cast<double>(maxval);
    }
  return img;
}

inline Image read_image(const std::string& path) {
  const auto raw = detail::read_file(path);
  return decode_pnm(std::string(raw.begin(), raw.end()), path);
}

/// Every *.pgm / *.ppm in `dir`, in filename order; all must share one shape.
/// A leading "<digits>_" in the filename is taken as the class label.
inline ImageSet load_ppm_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("'" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("'" + dir + "' holds no .pgm/.ppm images");
  ImageSet set;
  std::vector<double> data;
  for (const auto& f : files) {
    const Image img = read_image(f.string());
    if (set.labels.empty()) {
      set.channels = img.channels;
      set.height = img.height;
      set.width = img.width;
    } else if (img.channels != set.channels || img.height != set.height || img.width != set.width) {
      throw ShapeError("'" + f.string() + "' differs in shape from the first image");
    }
    data.insert(data.end(), img.pixels.data().begin(), img.pixels.data().end());
    const std::string stem = f.filename().string();
    std::size_t digits = 0;
    while (digits < stem.size() && std::isdigit(static_cast<unsigned char>(stem[digits]))) ++digits;
    set.labels.push_back(digits > 0 && digits < stem.size() && stem[digits] == '_' ? std::stoul(stem.substr(0, digits)) : 0);
  }
  set.images = Tensor({set.labels.size(), set.pixels()}, std::move(data));
  return set;
}

}  // namespace gradleak
