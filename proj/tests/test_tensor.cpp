#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "scoregate/error.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/tensor.hpp"

using scoregate::DimensionError;
using scoregate::Rng;
using scoregate::Tensor;

TEST(Tensor, ShapeAndRowMajorLayout) {
  Tensor t{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 0), 4.0);
  EXPECT_EQ(t[5], 6.0);
  EXPECT_EQ(t.row(1)[2], 6.0);
  EXPECT_EQ(t.column(1), (std::vector<double>{2, 5}));
}

TEST(Tensor, RejectsInconsistentData) {
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW((Tensor{{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, VectorsAndFiniteness) {
  const std::vector<double> v{1, 2, 3};
  const auto r = Tensor::row_vector(v);
  const auto c = Tensor::column_vector(v);
  EXPECT_EQ(r.rows(), 1u);
  EXPECT_EQ(c.cols(), 1u);
  EXPECT_EQ(r.values(), c.values());
  EXPECT_TRUE(r.all_finite());
  Tensor bad(1, 2);
  bad[1] = std::nan("");
  EXPECT_FALSE(bad.all_finite());
  EXPECT_EQ(r.shape_string(), "1x3");
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42, 3);
  Rng b(42, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsDiffer) {
  Rng a(42, 0);
  Rng b(42, 1);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_LT(equal, 2);
}

TEST(Rng, UniformRangeAndMean) {
  Rng rng(7);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(4.0, 10.0);
    ASSERT_GE(u, 4.0);
    ASSERT_LT(u, 10.0);
    sum += u;
  }
  const double se = 6.0 / std::sqrt(12.0 * n);
  EXPECT_NEAR(sum / n, 7.0, 5 * se);
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, PermutationIsPermutation) {
  Rng rng(3);
  auto p = rng.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(5);
    ASSERT_LT(v, 5u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 5u);
}
