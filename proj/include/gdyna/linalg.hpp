#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "gdyna/errors.hpp"

namespace gdyna {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Condition-number thresholds for direct solves.
inline constexpr double kWarnCondition = 1e8;
inline constexpr double kErrorCondition = 1e12;

/// 2-norm condition number (inf when singular).
double condition_number(const Matrix& m);

/// Smallest singular value.
double min_singular_value(const Matrix& m);

struct SolveResult {
  Vector x;
  double condition = 0.0;
};

/// Pivoted LU solve with condition reporting. Throws `Err` when the
/// condition number exceeds kErrorCondition; warns on stderr above
/// kWarnCondition.
template <class Err>
SolveResult checked_solve(const Matrix& m, const Vector& rhs, const std::string& what);

template <class Err>
Matrix checked_inverse(const Matrix& m, const std::string& what);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

/// Minimum-norm least-squares solution via complete orthogonal decomposition.
struct MinNormResult {
  Vector x;
  Eigen::Index rank = 0;
  double condition = 0.0;
  double residual = 0.0;
};
MinNormResult min_norm_solve(const Matrix& m, const Vector& rhs);

void warn(const std::string& message);

}  // namespace gdyna
