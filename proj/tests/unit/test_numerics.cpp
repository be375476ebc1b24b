#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "fsb/numerics.hpp"

using namespace fsb;

TEST(Softmax, UniformForEqualLogits) {
  const std::vector<double> z{2.0, 2.0, 2.0, 2.0};
  for (double p : softmax(z)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Softmax, StableForHugeLogits) {
  const std::vector<double> z{1000.0, 1000.0 + std::log(3.0)};
  const auto p = softmax(z);
  EXPECT_NEAR(p[0], 0.25, 1e-12);
  EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(Softmax, SumsToOneOnRandomInputs) {
  SeededRng rng(7);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(1 + rng.uniform_index(20));
    for (double& v : z) v = rng.normal(0.0, 30.0);
    const auto p = softmax(z);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Softmax, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(softmax(std::vector<double>{}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0, std::nan("")}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{std::numeric_limits<double>::infinity()}), InvalidInput);
}

TEST(Softmax, TemperatureFlattens) {
  const std::vector<double> z{0.0, 4.0};
  const auto sharp = softmax_with_temperature(z, 1.0);
  const auto soft = softmax_with_temperature(z, 4.0);
  EXPECT_NEAR(soft[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-14);
  EXPECT_GT(sharp[1], soft[1]);
  EXPECT_THROW(softmax_with_temperature(z, 0.0), InvalidInput);
}

TEST(CrossEntropy, MatchesDirectFormula) {
  const std::vector<double> z{0.3, -1.2, 2.5};
  const double direct = -std::log(std::exp(2.5) / (std::exp(0.3) + std::exp(-1.2) + std::exp(2.5)));
  EXPECT_NEAR(cross_entropy(z, 2), direct, 1e-14);
  EXPECT_THROW(cross_entropy(z, 3), InvalidInput);
}

TEST(CrossEntropy, EqualLogitsGiveLogC) {
  const std::vector<double> z(7, -3.0);
  EXPECT_NEAR(cross_entropy(z, 4), std::log(7.0), 1e-14);
}

TEST(KlDivergence, ZeroForIdenticalAndPositiveOtherwise) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  const std::vector<double> q{0.4, 0.4, 0.2};
  EXPECT_DOUBLE_EQ(kl_divergence(p, p), 0.0);
  const double direct = 0.2 * std::log(0.5) + 0.3 * std::log(0.75) + 0.5 * std::log(2.5);
  EXPECT_NEAR(kl_divergence(p, q), direct, 1e-14);
}

TEST(KlDivergence, ZeroMassTermsVanishAndClampKeepsFinite) {
  const std::vector<double> p{0.0, 1.0};
  const std::vector<double> q{0.5, 0.5};
  EXPECT_NEAR(kl_divergence(p, q), std::log(2.0), 1e-14);
  const std::vector<double> q0{1.0, 0.0};
  EXPECT_TRUE(std::isfinite(kl_divergence(p, q0)));
  EXPECT_NEAR(kl_divergence(p, q0), -std::log(kKlClamp), 1e-9);
  EXPECT_THROW(kl_divergence(p, std::vector<double>{1.0}), InvalidInput);
}

TEST(L2Normalize, UnitNormAndDirection) {
  const std::vector<double> v{3.0, 4.0};
  const auto r = l2_normalize(v);
  EXPECT_FALSE(r.degenerate);
  EXPECT_NEAR(r.values[0], 0.6, 1e-15);
  EXPECT_NEAR(r.values[1], 0.8, 1e-15);
}

TEST(L2Normalize, ZeroVectorIsFlaggedAndUnchanged) {
  const std::vector<double> v{0.0, 0.0, 0.0};
  const auto r = l2_normalize(v);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.values, v);
  DenseMatrix m(2, 3, 0.0);
  m(1, 0) = 2.0;
  EXPECT_EQ(l2_normalize_rows(m), 1u);
  EXPECT_DOUBLE_EQ(m(1, 0), 1.0);
}

TEST(L2Normalize, RandomVectorsHaveUnitNorm) {
  SeededRng rng(11);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(1 + rng.uniform_index(50));
    for (double& x : v) x = rng.normal(0.0, 100.0);
    const auto r = l2_normalize(v);
    double s = 0.0;
    for (double x : r.values) s += x * x;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-12);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0, 2.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{5.0}), 0u);
  EXPECT_THROW(argmax(std::vector<double>{}), InvalidInput);
}

TEST(DenseMatrix, ShapeCheckAndGather) {
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), InvalidInput);
  DenseMatrix m(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx{2, 0, 2};
  const DenseMatrix g = m.gather_rows(idx);
  EXPECT_EQ(g.rows(), 3u);
  EXPECT_DOUBLE_EQ(g(0, 1), 6.0);
  EXPECT_DOUBLE_EQ(g(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(g(2, 0), 5.0);
}

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(SeededRng, SplitMixReferenceValue) {
  // First output of SplitMix64 seeded with 0, from the published reference implementation.
  std::uint64_t s = 0;
  EXPECT_EQ(splitmix64(s), 0xE220A8397B1DCDAFULL);
}

TEST(SeededRng, UniformIndexInRangeAndCoversAll) {
  SeededRng rng(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = rng.uniform_index(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(SeededRng, NormalMomentsAreStandard) {
  SeededRng rng(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.015);
}

TEST(SeededRng, ShuffleIsPermutation) {
  SeededRng rng(9);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(DeriveSeed, ChildrenAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(17, i));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(17, 5), derive_seed(17, 5));
  EXPECT_NE(derive_seed(17, 5), derive_seed(18, 5));
  auto a = SeededRng::child(17, 5);
  SeededRng b(derive_seed(17, 5));
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Checksum, SensitiveToValueAndOrder) {
  Checksum a, b, c;
  a.add(std::vector<double>{1.0, 2.0});
  b.add(std::vector<double>{2.0, 1.0});
  c.add(std::vector<double>{1.0, 2.0});
  EXPECT_NE(a.value(), b.value());
  EXPECT_EQ(a.value(), c.value());
  Checksum z, nz;
  z.add(0.0);
  nz.add(-0.0);
  EXPECT_NE(z.value(), nz.value());
}

TEST(Softmax, SmallVectorMatchesDirectEvaluation) {
  const std::vector<double> z{1.0, 2.0, 3.0};
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const auto p = softmax(z);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], std::exp(z[i]) / denom, 1e-15);
  EXPECT_NEAR(p[0], 0.09003, 1e-5);
  EXPECT_NEAR(p[1], 0.24473, 1e-5);
  EXPECT_NEAR(p[2], 0.66524, 1e-5);
  const auto big = softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_DOUBLE_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
}

TEST(Softmax, ShiftInvariance) {
  SeededRng rng(21);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(2 + rng.uniform_index(10));
    for (double& v : z) v = rng.normal(0.0, 5.0);
    const double c = rng.normal(0.0, 100.0);
    std::vector<double> shifted = z;
    for (double& v : shifted) v += c;
    const auto a = softmax(z), b = softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(CrossEntropy, HandValues) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{0.0, 0.0}, 0), std::log(2.0), 1e-15);
  EXPECT_LT(cross_entropy(std::vector<double>{10.0, -10.0}, 0), 1e-8);
  EXPECT_NEAR(cross_entropy(std::vector<double>{10.0, -10.0}, 1), 20.0, 1e-6);
}

TEST(CrossEntropy, EqualsKlFromOneHot) {
  SeededRng rng(23);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(2 + rng.uniform_index(8));
    for (double& v : z) v = rng.normal(0.0, 3.0);
    const std::size_t y = rng.uniform_index(z.size());
    std::vector<double> onehot(z.size(), 0.0);
    onehot[y] = 1.0;
    EXPECT_NEAR(cross_entropy(z, y), kl_divergence(onehot, softmax(z)), 1e-9);
  }
}

TEST(KlDivergence, HandValuesAndGibbs) {
  EXPECT_DOUBLE_EQ(kl_divergence(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}), 0.0);
  EXPECT_NEAR(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}), 0.693147, 1e-6);
  SeededRng rng(29);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(5), b(5);
    for (double& v : a) v = rng.normal();
    for (double& v : b) v = rng.normal();
    const auto p = softmax(a), q = softmax(b);
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_LT(kl_divergence(p, p), 1e-12);
  }
}

TEST(L2Normalize, AxisVectorAndIdempotence) {
  const auto axis = l2_normalize(std::vector<double>{0.0, 0.0, 5.0});
  EXPECT_EQ(axis.values, (std::vector<double>{0.0, 0.0, 1.0}));
  SeededRng rng(31);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(8);
    for (double& x : v) x = rng.normal(0.0, 10.0);
    const auto once = l2_normalize(v);
    const auto twice = l2_normalize(once.values);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-12);
  }
}

TEST(SeededRng, TenThousandIdenticalDraws) {
  SeededRng a(123456789), b(123456789);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}
