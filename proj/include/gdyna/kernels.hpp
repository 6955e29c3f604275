#pragma once

// Dense inner loops shared by the planners, model learners and LSTD.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::parallel`. The parallel versions split work by output
// element only, so each element sees the same sequence of floating-point
// operations as in the serial reference and results are bitwise identical.
// Zero entries of the sparse-side operand are skipped; tile-coded features
// are mostly zero.

#include "gdyna/linalg.hpp"

namespace gdyna::kernels {

namespace serial {
/// y = M x
void matvec(const Matrix& m, const Vector& x, Vector& y);
/// y = M^T x
void matvec_transpose(const Matrix& m, const Vector& x, Vector& y);
/// M += scale * u v^T
void rank1_update(Matrix& m, const Vector& u, const Vector& v, double scale);
}  // namespace serial

namespace parallel {
void matvec(const Matrix& m, const Vector& x, Vector& y);
void matvec_transpose(const Matrix& m, const Vector& x, Vector& y);
void rank1_update(Matrix& m, const Vector& u, const Vector& v, double scale);
}  // namespace parallel

/// Work size (rows x active columns) below which the parallel kernels run inline.
inline constexpr long kParallelThreshold = 1L << 15;

// Default dispatch used by the library.
inline void matvec(const Matrix& m, const Vector& x, Vector& y) { parallel::matvec(m, x, y); }
inline void matvec_transpose(const Matrix& m, const Vector& x, Vector& y) {
  parallel::matvec_transpose(m, x, y);
}
inline void rank1_update(Matrix& m, const Vector& u, const Vector& v, double scale) {
  parallel::rank1_update(m, u, v, scale);
}

}  // namespace gdyna::kernels
