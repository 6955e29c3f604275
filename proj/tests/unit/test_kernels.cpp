#include "doctest.h"

#include <cstring>

#include "gdyna/kernels.hpp"
#include "gdyna/rng.hpp"

using namespace gdyna;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Vector random_vector(int n, int active, Rng& rng) {
  std::normal_distribution<double> g;
  Vector v = Vector::Zero(n);
  if (active >= n) {
    for (int i = 0; i < n; ++i) v(i) = g(rng);
  } else {
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int k = 0; k < active; ++k) v(pick(rng)) = 1.0;
  }
  return v;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("serial kernels agree with Eigen products") {
  Rng rng(11);
  const Matrix m = random_matrix(40, 30, rng);
  const Vector x = random_vector(30, 30, rng);
  const Vector z = random_vector(40, 5, rng);
  Vector y;
  kernels::serial::matvec(m, x, y);
  CHECK((y - m * x).norm() < 1e-12);
  kernels::serial::matvec_transpose(m, z, y);
  CHECK((y - m.transpose() * z).norm() < 1e-12);
  Matrix r = m;
  kernels::serial::rank1_update(r, z, x, -0.3);
  CHECK((r - (m - 0.3 * z * x.transpose())).norm() < 1e-12);
}

TEST_CASE("parallel kernels are bitwise identical to the serial references") {
  Rng rng(12);
  // Sizes on both sides of the inline threshold, dense and sparse operands.
  for (const int n : {16, 300, 700}) {
    for (const int active : {8, n}) {
      CAPTURE(n);
      CAPTURE(active);
      const Matrix m = random_matrix(n, n, rng);
      const Vector x = random_vector(n, active, rng);
      const Vector u = random_vector(n, n, rng);
      Vector ys, yp;
      kernels::serial::matvec(m, x, ys);
      kernels::parallel::matvec(m, x, yp);
      CHECK(bitwise_equal(ys, yp));
      kernels::serial::matvec_transpose(m, x, ys);
      kernels::parallel::matvec_transpose(m, x, yp);
      CHECK(bitwise_equal(ys, yp));
      Matrix ms = m, mp = m;
      kernels::serial::rank1_update(ms, u, x, 0.7);
      kernels::parallel::rank1_update(mp, u, x, 0.7);
      CHECK(bitwise_equal(ms, mp));
    }
  }
}

TEST_CASE("kernels reject mismatched shapes") {
  Matrix m = Matrix::Ones(3, 2);
  Vector y;
  CHECK_THROWS_AS(kernels::matvec(m, Vector::Ones(3), y), DimensionMismatch);
  CHECK_THROWS_AS(kernels::matvec_transpose(m, Vector::Ones(2), y), DimensionMismatch);
  CHECK_THROWS_AS(kernels::rank1_update(m, Vector::Ones(2), Vector::Ones(2), 1.0), DimensionMismatch);
}

TEST_CASE("zero operands leave outputs exact") {
  Rng rng(13);
  const Matrix m = random_matrix(5, 5, rng);
  Vector y;
  kernels::matvec(m, Vector::Zero(5), y);
  CHECK(y == Vector::Zero(5));
  Matrix r = m;
  kernels::rank1_update(r, Vector::Zero(5), Vector::Ones(5), 1.0);
  CHECK(r == m);
}
