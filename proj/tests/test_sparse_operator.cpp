#include <gtest/gtest.h>

#include <boost/multiprecision/float128.hpp>

#include "itgap/dense.hpp"
#include "itgap/log_scaled.hpp"
#include "itgap/sparse_operator.hpp"
#include "test_support.hpp"

using namespace itgap;
using namespace itgap::testing;

TEST(SparseOperator, TripletsSumDuplicatesAndDropResidue) {
  auto op = SparseOperator<double>::from_triplets(
      3, {{0, 1, 1.0}, {0, 1, 2.0}, {2, 2, 1e-15}, {1, 0, 1.0}, {1, 0, -1.0}});
  EXPECT_EQ(op.nnz(), 1U);
  EXPECT_EQ(op.entry(0, 1), std::complex<double>(3.0));
  EXPECT_EQ(op.entry(2, 2), std::complex<double>(0.0));
  EXPECT_EQ(op.entry(1, 0), std::complex<double>(0.0));
}

TEST(SparseOperator, IndexOutOfRangeThrows) {
  EXPECT_THROW(SparseOperator<double>::from_triplets(2, {{2, 0, 1.0}}), DimensionError);
  EXPECT_THROW(SparseOperator<double>(0), ValidationError);
}

TEST(SparseOperator, HermitianTagIsVerified) {
  auto ok = SparseOperator<double>::from_triplets(2, {{0, 1, {0, 1}}, {1, 0, {0, -1}}});
  EXPECT_NO_THROW(ok.with_structure(Structure::hermitian));
  auto bad = SparseOperator<double>::from_triplets(2, {{0, 1, {0, 1}}, {1, 0, {0, 1}}});
  EXPECT_THROW(bad.with_structure(Structure::hermitian), ValidationError);
  EXPECT_NO_THROW(bad.with_structure(Structure::anti_hermitian));
}

TEST(SparseOperator, ProductAndSumMatchDense) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + trial % 5;
    const auto a = random_hermitian_dense(n, rng), b = random_hermitian_dense(n, rng);
    const auto sa = from_dense(a), sb = from_dense(b);
    EXPECT_LT(max_abs_diff(to_dense(sa * sb), a * b), 1e-13);
    EXPECT_LT(max_abs_diff(to_dense(sa - sb), a - b), 1e-15);
    EXPECT_LT(max_abs_diff(to_dense(sa.adjoint()), a.adjoint()), 1e-15);
    EXPECT_NEAR(sa.frobenius_norm(), a.norm(), 1e-12);
  }
}

TEST(SparseOperator, ApplyMatchesDense) {
  std::mt19937_64 rng(5);
  const auto a = random_hermitian_dense(6, rng);
  const auto s = random_state(6, rng);
  const auto y = from_dense(a).apply(s.amplitudes());
  const Eigen::VectorXcd ref = a * to_vector(s);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_LT(std::abs(y[i] - ref(Eigen::Index(i))), 1e-14);
}

TEST(SparseOperator, CastToQuadKeepsEntriesAndTag) {
  using quad = boost::multiprecision::float128;
  std::mt19937_64 rng(3);
  const auto h = random_hermitian(4, rng);
  const auto q = h.cast<quad>();
  EXPECT_EQ(q.structure(), Structure::hermitian);
  EXPECT_EQ(q.nnz(), h.nnz());
  EXPECT_EQ(static_cast<double>(q.entry(1, 2).real()), h.entry(1, 2).real());
}

TEST(LogScaledComplex, MantissaInvariant) {
  for (double mag : {1e-300, 1e-5, 0.5, 1.0, 2.718281828, 3.0, 1e200}) {
    const auto v = LogScaledComplex::from_complex(std::complex<double>(mag, -mag));
    EXPECT_GE(std::abs(v.mantissa()), 1.0);
    EXPECT_LT(std::abs(v.mantissa()), std::numbers::e);
    EXPECT_NEAR(v.log_abs(), std::log(std::sqrt(2.0) * mag), 1e-12 * std::max(1.0, std::abs(std::log(mag))));
  }
  EXPECT_TRUE(LogScaledComplex::from_complex(std::complex<double>{}).is_zero());
}

TEST(LogScaledComplex, DivisionSurvivesUnderflow) {
  // Both operands far below the double range; the quotient is 2i.
  const auto a = LogScaledComplex::from_complex<double>({0.0, 4.0}, -2000.0);
  const auto b = LogScaledComplex::from_complex<double>({2.0, 0.0}, -2000.0);
  const auto q = (a / b).to_complex();
  EXPECT_NEAR(q.real(), 0.0, 1e-15);
  EXPECT_NEAR(q.imag(), 2.0, 1e-14);
  EXPECT_THROW(a / LogScaledComplex{}, NumericalError);
}

TEST(LogScaledComplex, AdditionAlignsExponents) {
  const auto a = LogScaledComplex::from_complex<double>({3.0, 0.0}, -1000.0);
  const auto b = LogScaledComplex::from_complex<double>({1.0, 0.0}, -1000.0);
  const auto s = a + b;
  EXPECT_NEAR(s.log_abs(), std::log(4.0) - 1000.0, 1e-12);
  EXPECT_TRUE((a - a).is_zero());
  EXPECT_NEAR(relative_difference(a, b), 2.0 / 3.0, 1e-14);
}
