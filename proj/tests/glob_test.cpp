#include <gtest/gtest.h>

#include "svdscope/glob.hpp"

using svdscope::Glob;
using svdscope::PatternError;

TEST(Glob, StarAndQuestion) {
  EXPECT_TRUE(Glob("*q_proj*").matches("model.layers.0.self_attn.q_proj.weight"));
  EXPECT_FALSE(Glob("*q_proj*").matches("model.layers.0.self_attn.k_proj.weight"));
  EXPECT_TRUE(Glob("layer?.w").matches("layer7.w"));
  EXPECT_FALSE(Glob("layer?.w").matches("layer17.w"));
  EXPECT_TRUE(Glob("*").matches(""));
  EXPECT_TRUE(Glob("a*b*c").matches("aXXbYYc"));
  EXPECT_FALSE(Glob("a*b*c").matches("aXXbYY"));
}

TEST(Glob, Classes) {
  EXPECT_TRUE(Glob("w[0-3]").matches("w2"));
  EXPECT_FALSE(Glob("w[0-3]").matches("w5"));
  EXPECT_TRUE(Glob("w[!0-3]").matches("w5"));
  EXPECT_TRUE(Glob("w[^0-3]").matches("w9"));
  EXPECT_TRUE(Glob("w[]x]").matches("w]"));
  EXPECT_TRUE(Glob("w[abc]").matches("wb"));
}

TEST(Glob, Escapes) {
  EXPECT_TRUE(Glob("a\\*b").matches("a*b"));
  EXPECT_FALSE(Glob("a\\*b").matches("aXb"));
}

TEST(Glob, MalformedPatterns) {
  EXPECT_THROW(Glob(""), PatternError);
  EXPECT_THROW(Glob("abc\\"), PatternError);
  EXPECT_THROW(Glob("w[0-3"), PatternError);
}
