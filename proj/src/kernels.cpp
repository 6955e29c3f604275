#include "gdyna/kernels.hpp"

#include <algorithm>
#include <vector>

namespace gdyna::kernels {

namespace {

std::vector<Eigen::Index> nonzeros(const Vector& v) {
  std::vector<Eigen::Index> nz;
  nz.reserve(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v(i) != 0.0) nz.push_back(i);
  return nz;
}

void check_matvec(const Matrix& m, const Vector& x) {
  if (m.cols() != x.size()) throw DimensionMismatch("matvec: matrix columns != vector size");
}

void check_transpose(const Matrix& m, const Vector& x) {
  if (m.rows() != x.size()) throw DimensionMismatch("matvec_transpose: matrix rows != vector size");
}

void check_rank1(const Matrix& m, const Vector& u, const Vector& v) {
  if (m.rows() != u.size() || m.cols() != v.size())
    throw DimensionMismatch("rank1_update: outer product shape != matrix shape");
}

}  // namespace

namespace serial {

void matvec(const Matrix& m, const Vector& x, Vector& y) {
  check_matvec(m, x);
  const auto nz = nonzeros(x);
  y.setZero(m.rows());
  for (const auto j : nz) {
    const double xj = x(j);
    for (Eigen::Index i = 0; i < m.rows(); ++i) y(i) += m(i, j) * xj;
  }
}

void matvec_transpose(const Matrix& m, const Vector& x, Vector& y) {
  check_transpose(m, x);
  const auto nz = nonzeros(x);
  y.resize(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double acc = 0.0;
    for (const auto i : nz) acc += m(i, j) * x(i);
    y(j) = acc;
  }
}

void rank1_update(Matrix& m, const Vector& u, const Vector& v, double scale) {
  check_rank1(m, u, v);
  const auto nz_u = nonzeros(u);
  const auto nz_v = nonzeros(v);
  for (const auto j : nz_v) {
    const double sv = scale * v(j);
    for (const auto i : nz_u) m(i, j) += sv * u(i);
  }
}

}  // namespace serial

namespace parallel {

void matvec(const Matrix& m, const Vector& x, Vector& y) {
  check_matvec(m, x);
  const auto nz = nonzeros(x);
  const Eigen::Index rows = m.rows();
  const long nnz = static_cast<long>(nz.size());
  y.setZero(rows);
  constexpr Eigen::Index kBlock = 64;
  const Eigen::Index blocks = (rows + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static) if (rows * nnz >= kParallelThreshold)
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const Eigen::Index lo = b * kBlock;
    const Eigen::Index hi = std::min(rows, lo + kBlock);
    for (const auto j : nz) {
      const double xj = x(j);
      for (Eigen::Index i = lo; i < hi; ++i) y(i) += m(i, j) * xj;
    }
  }
}

void matvec_transpose(const Matrix& m, const Vector& x, Vector& y) {
  check_transpose(m, x);
  const auto nz = nonzeros(x);
  const Eigen::Index cols = m.cols();
  const long nnz = static_cast<long>(nz.size());
  y.resize(cols);
#pragma omp parallel for schedule(static) if (cols * nnz >= kParallelThreshold)
  for (Eigen::Index j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (const auto i : nz) acc += m(i, j) * x(i);
    y(j) = acc;
  }
}

void rank1_update(Matrix& m, const Vector& u, const Vector& v, double scale) {
  check_rank1(m, u, v);
  const auto nz_u = nonzeros(u);
  const auto nz_v = nonzeros(v);
  const long work = static_cast<long>(nz_u.size()) * static_cast<long>(nz_v.size());
  const long ncols = static_cast<long>(nz_v.size());
#pragma omp parallel for schedule(static) if (work >= kParallelThreshold)
  for (long k = 0; k < ncols; ++k) {
    const auto j = nz_v[static_cast<std::size_t>(k)];
    const double sv = scale * v(j);
    for (const auto i : nz_u) m(i, j) += sv * u(i);
  }
}

}  // namespace parallel

}  // namespace gdyna::kernels
