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

// Data sources: a seeded synthetic image generator, MNIST-style IDX files,
// PGM/PPM images, and whitespace-separated token files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradleak/models.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

/// Images [count, C*H*W] in [0,1] with integer labels.
struct ImageSet {
  std::size_t channels = 1, height = 0, width = 0;
  Tensor images;
  std::vector<std::size_t> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t pixels() const { return channels * height * width; }

  /// Rows [first, first + n) as a Batch with one-hot labels.
  Batch batch(std::size_t first, std::size_t n, std::size_t classes) const {
    if (first + n > count()) throw Error("image set has " + std::to_string(count()) + " samples, need " + std::to_string(first + n));
    const std::size_t p = pixels();
    std::vector<double> data(images.data().begin() + static_cast<std::ptrdiff_t>(first * p),
                             images.data().begin() + static_cast<std::ptrdiff_t>((first + n) * p));
    std::vector<std::size_t> lab(labels.begin() + static_cast<std::ptrdiff_t>(first),
                                 labels.begin() + static_cast<std::ptrdiff_t>(first + n));
    for (auto& l : lab) l %= classes;
    return Batch{Tensor({n, p}, std::move(data)), one_hot(lab, classes)};
  }
};

/// Smooth random blobs: a few Gaussian bumps per channel, rescaled to span
/// [0,1]; labels uniform in [0, classes).
inline ImageSet synthetic_images(std::size_t count, std::size_t channels, std::size_t height,
                                 std::size_t width, std::size_t classes, std::uint64_t seed) {
  ImageSet set;
  set.channels = channels;
  set.height = height;
  set.width = width;
  set.images = Tensor({count, channels * height * width});
  Rng rng(derive_seed(seed, "synthetic"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  const double extent = static_cast<double>(std::max(height, width));
  for (std::size_t s = 0; s < count; ++s) {
    double* img = set.images.data().data() + s * set.pixels();
    for (std::size_t c = 0; c < channels; ++c) {
      double* plane = img + c * height * width;
      const int blobs = 2 + static_cast<int>(unit(rng) * 3.0);
      for (int b = 0; b < blobs; ++b) {
        const double cy = unit(rng) * static_cast<double>(height);
        const double cx = unit(rng) * static_cast<double>(width);
        const double sigma = extent * (0.12 + 0.25 * unit(rng));
        const double amp = (unit(rng) < 0.25 ? -0.5 : 1.0) * (0.4 + 0.6 * unit(rng));
        for (std::size_t y = 0; y < height; ++y)
          for (std::size_t x = 0; x < width; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            plane[y * width + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          }
      }
      const auto [lo, hi] = std::minmax_element(plane, plane + height * width);
      const double l = *lo, range = *hi - *lo;
      for (std::size_t i = 0; i < height * width; ++i) {
        plane[i] = range > 0.0 ? (plane[i] - l) / range : 0.5;
      }
    }
    set.labels.push_back(label(rng));
  }
  return set;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    throw Error("'" + path + "' truncated at byte " + std::to_string(b.size()) +
                " (header field at byte " + std::to_string(off) + ")");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// IDX image file (magic 0x00000803, u8 pixels) scaled to [0,1].
inline ImageSet load_idx_images(const std::string& path) {
  const auto b = detail::read_file(path);
  const std::uint32_t magic = detail::be32(b, 0, path);
  if (magic != kIdxImageMagic) {
    std::ostringstream os;
    os << "'" << path << "': bad IDX image magic 0x" << std::hex << magic;
    throw Error(os.str());
  }
  const std::size_t n = detail::be32(b, 4, path);
  const std::size_t h = detail::be32(b, 8, path);
  const std::size_t w = detail::be32(b, 12, path);
  if (n == 0 || h == 0 || w == 0) throw Error("'" + path + "': empty IDX image extents");
  const std::size_t need = 16 + n * h * w;
  if (b.size() < need) {
    throw Error("'" + path + "' truncated at byte " + std::to_string(b.size()) + ", expected " +
                std::to_string(need) + " bytes");
  }
  ImageSet set;
  set.height = h;
  set.width = w;
  set.images = Tensor({n, h * w});
  for (std::size_t i = 0; i < n * h * w; ++i) set.images[i] = b[16 + i] / 255.0;
  set.labels.assign(n, 0);
  return set;
}

/// IDX label file (magic 0x00000801, u8 labels).
inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
  const auto b = detail::read_file(path);
  const std::uint32_t magic = detail::be32(b, 0, path);
  if (magic != kIdxLabelMagic) {
    std::ostringstream os;
    os << "'" << path << "': bad IDX label magic 0x" << std::hex << magic;
    throw Error(os.str());
  }
  const std::size_t n = detail::be32(b, 4, path);
  if (b.size() < 8 + n) {
    throw Error("'" + path + "' truncated at byte " + std::to_string(b.size()) + ", expected " +
                std::to_string(8 + n) + " bytes");
  }
  return std::vector<std::size_t>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

inline ImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
  ImageSet set = load_idx_images(images_path);
  if (!labels_path.empty()) {
    set.labels = load_idx_labels(labels_path);
    if (set.labels.size() != set.count()) {
      throw Error("IDX label count " + std::to_string(set.labels.size()) +
                  " differs from image count " + std::to_string(set.count()));
    }
  }
  return set;
}

/// One sentence of token ids per non-empty line; '#' starts a comment line.
inline std::vector<std::vector<std::size_t>> load_token_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open '" + path + "'");
  std::vector<std::vector<std::size_t>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::size_t> sentence;
    std::string tok;
    while (ls >> tok) {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || tok[0] == '-') {
        throw Error("'" + path + "' line " + std::to_string(lineno) + ": bad token id '" + tok + "'");
      }
      sentence.push_back(static_cast<std::size_t>(v));
    }
    if (!sentence.empty()) out.push_back(std::move(sentence));
  }
  return out;
}

/// Uniformly random sentences of `length` ids below `vocab`.
inline std::vector<std::vector<std::size_t>> synthetic_sentences(std::size_t count, std::size_t length,
                                                                 std::size_t vocab, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "sentences"));
  std::uniform_int_distribution<std::size_t> id(0, vocab - 1);
  std::vector<std::vector<std::size_t>> out(count, std::vector<std::size_t>(length));
  for (auto& s : out)
    for (auto& t : s) t = id(rng);
  return out;
}

}  // namespace gradleak
