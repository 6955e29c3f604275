#pragma once
// Independent reference computations used only by the tests. Each one takes
// a different route from the library code it checks: linear solves instead
// of power iteration, fixed-point iteration instead of direct solves, raw
// triple sums instead of the library's enumeration helpers.

#include <functional>

#include "gdyna/analysis.hpp"
#include "gdyna/mdp.hpp"

namespace oracle {

using gdyna::Matrix;
using gdyna::Vector;

/// Stationary distribution from the stacked system [P^T - I; 1^T] eta = [0; 1].
inline Vector stationary(const Matrix& p) {
  const auto n = p.rows();
  Matrix sys(n + 1, n);
  sys.topRows(n) = p.transpose() - Matrix::Identity(n, n);
  sys.row(n).setOnes();
  Vector rhs = Vector::Zero(n + 1);
  rhs(n) = 1.0;
  return sys.colPivHouseholderQr().solve(rhs);
}

/// Behaviour-chain kernel assembled from the raw transition blocks.
inline Matrix chain(const gdyna::TabularMDP& mdp, const Matrix& policy) {
  const int n = mdp.num_states();
  Matrix p = Matrix::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    if (mdp.terminal(s)) {
      p.row(s) = mdp.restart().transpose();
      continue;
    }
    for (int a = 0; a < mdp.num_actions(); ++a) p.row(s) += policy(s, a) * mdp.transition(a).row(s);
  }
  return p;
}

/// Iterative policy evaluation on the episodic kernel.
inline Vector value(const gdyna::TabularMDP& mdp, const Matrix& policy, double tol = 1e-14) {
  const int n = mdp.num_states();
  Vector v = Vector::Zero(n);
  for (int it = 0; it < 1000000; ++it) {
    Vector next = Vector::Zero(n);
    for (int s = 0; s < n; ++s) {
      if (mdp.terminal(s)) continue;
      for (int a = 0; a < mdp.num_actions(); ++a)
        for (int t = 0; t < n; ++t) {
          const double p = mdp.transition(a)(s, t);
          if (p > 0.0) next(s) += policy(s, a) * p * (mdp.reward(a)(s, t) + mdp.gamma() * v(t));
        }
    }
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < tol) break;
  }
  return v;
}

/// A_env, C and c_env by an explicit sum over (s, a, s') of the behaviour chain.
struct EnvMoments {
  Matrix a, c_moment;
  Vector c;
};

inline EnvMoments env_moments(const gdyna::TabularMDP& mdp, const Matrix& b, const Matrix& pi, const Matrix& x) {
  const int n = mdp.num_states();
  const auto m = x.cols();
  const Vector eta = stationary(chain(mdp, b));
  EnvMoments out{Matrix::Zero(m, m), Matrix::Zero(m, m), Vector::Zero(m)};
  for (int s = 0; s < n; ++s) {
    const Vector xs = x.row(s).transpose();
    out.c_moment += eta(s) * xs * xs.transpose();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      if (b(s, a) == 0.0) continue;
      const double rho = pi(s, a) / b(s, a);
      for (int t = 0; t < n; ++t) {
        const double p = mdp.terminal(s) ? mdp.restart()(t) : mdp.transition(a)(s, t);
        const double r = mdp.terminal(s) ? 0.0 : mdp.reward(a)(s, t);
        if (p == 0.0) continue;
        const double w = eta(s) * b(s, a) * p * rho;
        out.a += w * xs * (xs - mdp.gamma() * x.row(t).transpose()).transpose();
        out.c += w * r * xs;
      }
    }
  }
  return out;
}

/// Central finite-difference gradient.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x, double eps) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector hi = x, lo = x;
    hi(i) += eps;
    lo(i) -= eps;
    g(i) = (f(hi) - f(lo)) / (2.0 * eps);
  }
  return g;
}

inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Moore-Penrose pseudo-inverse from an SVD.
inline Matrix pseudo_inverse(const Matrix& m, double tol = 1e-10) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector s = svd.singularValues();
  const double cut = tol * s(0);
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = s(i) > cut ? 1.0 / s(i) : 0.0;
  return svd.matrixV() * s.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace oracle
