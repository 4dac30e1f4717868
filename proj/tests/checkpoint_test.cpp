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

#include <cstring>
#include <limits>
#include <sstream>

#include "gradleak/checkpoint.hpp"
#include "gradleak/models.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamSet p = init_params(ModelSpec::convnet(1, 5, 5, {2}, 3, {4}, 3), 9);
  p.insert("odd", Tensor({3}, std::vector<double>{-0.0, std::numeric_limits<double>::denorm_min(), 1e308}));
  const std::string path = testing::scratch_dir("ckpt") + "/p.bin";
  save_params(path, p);
  const ParamSet q = load_params(path);
  ASSERT_TRUE(p.aligned_with(q));
  for (std::size_t i = 0; i < p.size(); ++i) {
    ASSERT_EQ(std::memcmp(p[i].second.data().data(), q[i].second.data().data(),
                          p[i].second.size() * sizeof(double)), 0);
  }
  EXPECT_TRUE(std::signbit(q.at("odd")[0]));
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  GradSet g;
  g.insert("a", Tensor({1}, 1.0));
  std::ostringstream os;
  write_tensors(os, g);
  const std::string s = os.str();
  // magic(5) + len(4) + "a" + rank(4) + extent(8) + value(8)
  ASSERT_EQ(s.size(), 5u + 4 + 1 + 4 + 8 + 8);
  EXPECT_EQ(s.substr(0, 5), "GLPK1");
  EXPECT_EQ(static_cast<unsigned char>(s[5]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 1]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 2]), 0xF0u);
}

TEST(Checkpoint, BadMagicRejected) {
  std::istringstream is(std::string("NOPE1rest"));
  EXPECT_THROW(read_tensors<ParamTag>(is), Error);
}

TEST(Checkpoint, TruncationReportsOffset) {
  GradSet g;
  g.insert("w", Tensor({2}, 3.0));
  std::ostringstream os;
  write_tensors(os, g);
  const std::string full = os.str();
  std::istringstream is(full.substr(0, full.size() - 3));
  try {
    read_tensors<GradTag>(is);
    FAIL() << "expected truncation error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("at byte " + std::to_string(full.size() - 3)), std::string::npos)
        << e.what();
  }
}

}  // namespace
}  // namespace gradleak
