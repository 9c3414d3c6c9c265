// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "plora/errors.hpp"
#include "plora/linalg.hpp"

namespace plora {
namespace {

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix a{{1.5, -2.0}, {0.25, 4.0}};
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(Matmul, HandComputedProduct) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{0}, {1}};
  EXPECT_EQ(matmul(a, b), (Matrix{{2}, {4}}));
}

TEST(Matmul, ZeroAnnihilates) {
  const Matrix out = matmul(Matrix(2, 3), Matrix(3, 4, 1.0));
  EXPECT_EQ(out, Matrix(2, 4));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
  }
}

TEST(Matmul, AgreesWithNaiveProductOnRandomShapes) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(7), k = 1 + rng.uniform_index(7), m = 1 + rng.uniform_index(7);
    const Matrix a = oracle::random_matrix(n, k, rng);
    const Matrix b = oracle::random_matrix(k, m, rng);
    EXPECT_LT(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_tn(a.transposed(), b), oracle::naive_matmul(a, b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, b.transposed()), oracle::naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, AssociativeOnRandomTriples) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(6), m = 1 + rng.uniform_index(6),
                      q = 1 + rng.uniform_index(6);
    Matrix a(n, k), b(k, m), c(m, q);
    for (Matrix* x : {&a, &b, &c}) {
      for (double& v : x->values()) v = 20.0 * rng.uniform() - 10.0;
    }
    EXPECT_LT(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
  }
}

TEST(VectorOps, VecmatMatchesRowProduct) {
  Rng rng(5);
  const Matrix m = oracle::random_matrix(4, 3, rng);
  const Vector v = oracle::random_vector(4, rng);
  EXPECT_LT(max_abs_diff(vecmat(v, m), oracle::row_times(v, m)), 1e-12);
  EXPECT_THROW(vecmat(Vector(3), m), DimensionError);
}

TEST(GaussianInit, SampleMeanNearZero) {
  Rng rng(7);
  const Matrix m = gaussian_init(1000, 10, 0.02, rng);
  const double mean = std::accumulate(m.values().begin(), m.values().end(), 0.0) / static_cast<double>(m.size());
  EXPECT_LT(std::abs(mean), 0.005);
  double var = 0.0;
  for (double v : m.values()) var += v * v;
  EXPECT_NEAR(std::sqrt(var / static_cast<double>(m.size())), 0.02, 0.001);
}

TEST(GaussianInit, SameSeedBitIdentical) {
  Rng a(42), b(42);
  EXPECT_EQ(gaussian_init(5, 6, 0.3, a), gaussian_init(5, 6, 0.3, b));
}

TEST(GaussianInit, RejectsNonPositiveStd) {
  Rng rng(1);
  EXPECT_THROW(gaussian_init(2, 2, 0.0, rng), ParameterError);
  EXPECT_THROW(gaussian_init(2, 2, -1.0, rng), ParameterError);
}

TEST(FiniteDiff, LinearFunctionGivesOnes) {
  const Matrix x{{0.3, -1.2, 4.0}, {2.0, 0.0, -0.5}};
  const Matrix g = finite_diff_grad(
      [](const Matrix& m) { return std::accumulate(m.values().begin(), m.values().end(), 0.0); }, x, 1e-5);
  EXPECT_LT(max_abs_diff(g, Matrix(2, 3, 1.0)), 1e-8);
}

TEST(FiniteDiff, SquaredSumGivesTwiceInput) {
  const Matrix x{{1, 2}};
  const Matrix g = finite_diff_grad(
      [](const Matrix& m) {
        double s = 0.0;
        for (double v : m.values()) s += v * v;
        return s;
      },
      x, 1e-5);
  EXPECT_LT(max_abs_diff(g, Matrix{{2, 4}}), 1e-6);
}

TEST(FiniteDiff, QuadraticFormMatchesAnalytic) {
  Rng rng(9);
  const Matrix x = oracle::random_matrix(3, 4, rng);
  const Vector v = oracle::random_vector(4, rng);
  auto f = [&v](const Matrix& m) {
    const Vector xv = matvec(m, v);
    return oracle::vdot(xv, xv);
  };
  const Matrix numeric = finite_diff_grad(f, x, 1e-5);
  const Matrix analytic = outer(matvec(x, v), v) * 2.0;
  EXPECT_LT(max_abs_diff(numeric, analytic), 1e-6);
}

TEST(FiniteDiff, RejectsNonPositiveEps) {
  EXPECT_THROW(finite_diff_grad([](const Matrix&) { return 0.0; }, Matrix(1, 1), 0.0), ParameterError);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(RngTest, UniformInUnitInterval) {
  Rng rng(8);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(RngTest, UniformIndexCoversRangeEvenly) {
  Rng rng(10);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(RngTest, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(4), r2(4);
  r1.shuffle(std::span<int>(a));
  r2.shuffle(std::span<int>(b));
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(RngTest, ForksAreIndependentOfParentPosition) {
  Rng a(99);
  Rng b(99);
  b.next_u64();
  EXPECT_EQ(a.fork(3).next_u64(), b.fork(3).next_u64());
  EXPECT_NE(a.fork(3).next_u64(), a.fork(4).next_u64());
}

TEST(Helpers, RelativeErrorAndNorms) {
  const Vector a{3.0, 4.0};
  EXPECT_DOUBLE_EQ(l2_norm(a.values()), 5.0);
  EXPECT_DOUBLE_EQ(relative_error(a.values(), a.values()), 0.0);
  const Vector b{3.0, 4.5};
  EXPECT_NEAR(relative_error(a.values(), b.values()), 0.5 / l2_norm(b.values()), 1e-15);
  EXPECT_TRUE(all_finite(a.values()));
  const Vector bad{1.0, std::nan("")};
  EXPECT_FALSE(all_finite(bad.values()));
}

TEST(Helpers, ColumnSumsAndBroadcast) {
  Matrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(column_sums(m), (Vector{4, 6}));
  add_row_broadcast(m, Vector{10, 20});
  EXPECT_EQ(m, (Matrix{{11, 22}, {13, 24}}));
}

}  // namespace
}  // namespace plora
