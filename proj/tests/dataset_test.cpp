// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <fstream>

#include "gradleak/harness/dataset.hpp"
#include "gradleak/harness/image_io.hpp"
#include "test_util.hpp"

#ifndef GRADLEAK_FIXTURE_DIR
#define GRADLEAK_FIXTURE_DIR "tests/fixtures"
#endif

namespace gradleak {
namespace {

const std::string kFixtures = GRADLEAK_FIXTURE_DIR;

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(Idx, FixturePixelsAndLabels) {
  const ImageSet set = load_idx(kFixtures + "/two-4x4-images.idx", kFixtures + "/two-labels.idx");
  ASSERT_EQ(set.count(), 2u);
  EXPECT_EQ(set.height, 4u);
  EXPECT_EQ(set.width, 4u);
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{3, 7}));
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(set.images[i], 17.0 * static_cast<double>(i) / 255.0);
    EXPECT_EQ(set.images[16 + i], 17.0 * static_cast<double>(15 - i) / 255.0);
  }
  const Batch b = set.batch(1, 1, 10);
  EXPECT_EQ(b.y[7], 1.0);
  EXPECT_THROW(set.batch(1, 2, 10), Error);
}

TEST(Idx, TruncationNamesByteOffset) {
  const std::string dir = testing::scratch_dir("idx");
  const std::string full = slurp(kFixtures + "/two-4x4-images.idx");
  ASSERT_EQ(full.size(), 48u);
  spit(dir + "/short.idx", full.substr(0, 40));
  try {
    load_idx_images(dir + "/short.idx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("at byte 40"), std::string::npos) << e.what();
  }
  spit(dir + "/header.idx", full.substr(0, 6));
  EXPECT_THROW(load_idx_images(dir + "/header.idx"), Error);
}

TEST(Idx, BadMagicRejected) {
  EXPECT_THROW(load_idx_images(kFixtures + "/two-labels.idx"), Error);
  EXPECT_THROW(load_idx_labels(kFixtures + "/two-4x4-images.idx"), Error);
  EXPECT_THROW(load_idx_images(kFixtures + "/missing.idx"), Error);
}

TEST(Synthetic, ImagesInRangeAndSeeded) {
  const ImageSet a = synthetic_images(6, 3, 8, 8, 4, 11), b = synthetic_images(6, 3, 8, 8, 4, 11);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.images == synthetic_images(6, 3, 8, 8, 4, 12).images);
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (std::size_t l : a.labels) EXPECT_LT(l, 4u);
}

TEST(Tokens, FileParsing) {
  const std::string dir = testing::scratch_dir("tokens");
  spit(dir + "/ok.txt", "# comment\n1 2 3\n\n4  5 6\n");
  EXPECT_EQ(load_token_file(dir + "/ok.txt"), (std::vector<std::vector<std::size_t>>{{1, 2, 3}, {4, 5, 6}}));
  spit(dir + "/bad.txt", "1 2\n3 x\n");
  try {
    load_token_file(dir + "/bad.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  const auto s = synthetic_sentences(3, 5, 50, 1);
  EXPECT_EQ(s, synthetic_sentences(3, 5, 50, 1));
  for (const auto& sentence : s) {
    EXPECT_EQ(sentence.size(), 5u);
    for (std::size_t t : sentence) EXPECT_LT(t, 50u);
  }
}

TEST(Pnm, HalfGrayRoundsUp) {
  const std::string bytes = encode_pnm(std::vector<double>(4, 0.5), 1, 2, 2);
  EXPECT_EQ(bytes, std::string("P5\n2 2\n255\n") + std::string(4, static_cast<char>(128)));
  EXPECT_EQ(to_byte(-1.0), 0);
  EXPECT_EQ(to_byte(2.0), 255);
}

TEST(Pnm, ColorIsInterleaved) {
  // Planar R = 1, G = 0, B = 0.5 for a 1x2 image.
  const std::string bytes = encode_pnm(std::vector<double>{1, 1, 0, 0, 0.5, 0.5}, 3, 1, 2);
  const std::string header = "P6\n2 1\n255\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  const std::string raster = bytes.substr(header.size());
  EXPECT_EQ(raster, std::string("\xff\x00\x80\xff\x00\x80", 6));
}

TEST(Pnm, RoundTripWithinHalfStep) {
  std::mt19937_64 rng(5);
  const std::string dir = testing::scratch_dir("pnm");
  for (std::size_t channels : {1u, 3u}) {
    const Tensor img = testing::random_tensor({channels, 5, 7}, rng, 0.0, 1.0);
    const std::string path = dir + "/img" + (channels == 1 ? std::string(".pgm") : std::string(".ppm"));
    write_image(img, path);
    const Image back = read_image(path);
    ASSERT_EQ(back.pixels.shape(), img.shape());
    EXPECT_LE(testing::max_abs_diff(back.pixels, img), 1.0 / 510.0 + 1e-15);
  }
}

TEST(Pnm, HeaderCommentsAndErrors) {
  const Image img = decode_pnm(std::string("P5\n# made by hand\n2 1\n255\n") + '\x00' + '\xff');
  EXPECT_EQ(img.pixels.storage(), (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(decode_pnm("P2\n1 1\n255\n0"), Error);
  EXPECT_THROW(decode_pnm(std::string("P5\n2 2\n255\n") + "ab"), Error);
  EXPECT_THROW(encode_pnm(std::vector<double>(8, 0.0), 2, 2, 2), Error);
}

TEST(Pnm, DirectoryLoadsInNameOrderWithLabels) {
  const std::string dir = testing::scratch_dir("ppmdir");
  write_image(Tensor({1, 2, 2}, 0.0), dir + "/2_b.pgm");
  write_image(Tensor({1, 2, 2}, 1.0), dir + "/1_a.pgm");
  write_image(Tensor({1, 2, 2}, 0.2), dir + "/plain.pgm");
  spit(dir + "/notes.txt", "ignored");
  const ImageSet set = load_ppm_dir(dir);
  EXPECT_EQ(set.labels, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(set.images[0], 1.0);
  EXPECT_EQ(set.images[4], 0.0);
  write_image(Tensor({3, 2, 2}, 0.0), dir + "/3_c.ppm");
  EXPECT_THROW(load_ppm_dir(dir), ShapeError);
}

}  // namespace
}  // namespace gradleak
