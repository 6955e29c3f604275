#include "gdyna/linalg.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

namespace gdyna {

namespace {

Vector singular_values(const Matrix& m) {
  if (m.rows() <= 32) return Eigen::JacobiSVD<Matrix>(m).singularValues();
  return Eigen::BDCSVD<Matrix>(m).singularValues();
}

}  // namespace

double condition_number(const Matrix& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  const Vector sv = singular_values(m);
  const double lo = sv(sv.size() - 1);
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / lo;
}

double min_singular_value(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const Vector sv = singular_values(m);
  return sv(sv.size() - 1);
}

void warn(const std::string& message) { std::cerr << "warning: " << message << '\n'; }

template <class Err>
SolveResult checked_solve(const Matrix& m, const Vector& rhs, const std::string& what) {
  if (m.rows() != m.cols() || m.rows() != rhs.size())
    throw DimensionMismatch(what + ": solve dimensions do not match");
  SolveResult out;
  out.condition = condition_number(m);
  if (!(out.condition <= kErrorCondition)) {
    std::ostringstream os;
    os << what << " is singular (condition " << out.condition << ")";
    throw Err(os.str());
  }
  if (out.condition > kWarnCondition) {
    std::ostringstream os;
    os << what << " is ill-conditioned (condition " << out.condition << ")";
    warn(os.str());
  }
  out.x = m.fullPivLu().solve(rhs);
  return out;
}

template <class Err>
Matrix checked_inverse(const Matrix& m, const std::string& what) {
  if (m.rows() != m.cols()) throw DimensionMismatch(what + ": not square");
  const double cond = condition_number(m);
  if (!(cond <= kErrorCondition)) {
    std::ostringstream os;
    os << what << " is singular (condition " << cond << ")";
    throw Err(os.str());
  }
  if (cond > kWarnCondition) {
    std::ostringstream os;
    os << what << " is ill-conditioned (condition " << cond << ")";
    warn(os.str());
  }
  return m.fullPivLu().inverse();
}

#define GDYNA_INSTANTIATE(Err)                                                         \
  template SolveResult checked_solve<Err>(const Matrix&, const Vector&, const std::string&); \
  template Matrix checked_inverse<Err>(const Matrix&, const std::string&);

GDYNA_INSTANTIATE(SingularSystem)
GDYNA_INSTANTIATE(SingularMoment)
GDYNA_INSTANTIATE(SingularKeyMatrix)
GDYNA_INSTANTIATE(SingularResolvent)
GDYNA_INSTANTIATE(SingularAccumulator)
#undef GDYNA_INSTANTIATE

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

MinNormResult min_norm_solve(const Matrix& m, const Vector& rhs) {
  // Pivots below 1e-10 of the largest count as zero: sampled moment
  // matrices of tile codings carry rounding noise in their null space.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(m.rows(), m.cols());
  cod.setThreshold(1e-10);
  cod.compute(m);
  MinNormResult out;
  out.x = cod.solve(rhs);
  out.rank = cod.rank();
  out.condition = condition_number(m);
  out.residual = (m * out.x - rhs).norm();
  return out;
}

}  // namespace gdyna
