#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gdyna/environments.hpp"
#include "gdyna/features.hpp"
#include "gdyna/linalg.hpp"
#include "gdyna/mdp.hpp"
#include "gdyna/models.hpp"
#include "gdyna/rng.hpp"

namespace gdyna {

/// A = E_zeta[phi (phi - gamma x_hat(phi, A))^T], C = E_zeta[phi phi^T],
/// c = E_zeta[r_hat(phi, A) phi], with A ~ pi(.|phi).
struct ObjectiveTerms {
  Matrix a;
  Matrix c_moment;
  Vector c;
  /// E_zeta[(gamma x_hat - phi) phi^T] = -A^T
  Matrix gradient_factor() const { return -a.transpose(); }
};

ObjectiveTerms objective_terms(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                               double gamma);

/// The same quantities from real behaviour data, importance-weighted by
/// rho = pi(a|x) / b(a|x): A_env = E_b[rho x (x - gamma x')^T], C = E_b[x x^T],
/// c_env = E_b[rho R x].
struct EnvTerms {
  Matrix a;
  Matrix c_moment;
  Vector c;
};

EnvTerms env_terms(const TabularMDP& mdp, const Policy& behavior, const Policy& target, const FeatureTable& features);

/// Off-policy TD fixed point from real data.
Vector fixed_point_env(const TabularMDP& mdp, const Policy& behavior, const Policy& target,
                       const FeatureTable& features);
/// (I - gamma F^T)^-1 b with F = E[F_A phi phi^T] C^-1, b = C^-1 E[phi phi^T b_A].
Vector fixed_point_linear(const LinearExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                          double gamma);
/// A^-1 c for the given model (the TD fixed point of planning with it).
Vector fixed_point_nonlinear(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                             double gamma);
/// Minimiser of MB-MSPBE through the normal equations (A^T C^-1 A) w = A^T C^-1 c.
Vector mb_mspbe_minimizer(const ObjectiveTerms& terms);

/// E[Delta phi]^T C^-1 E[Delta phi]
double mb_mspbe(const Vector& w, const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                double gamma);
/// Exact gradient 2 E[(gamma x_hat - phi) phi^T] C^-1 E[Delta phi].
Vector mb_mspbe_gradient(const Vector& w, const ExpectationModel& model, const FeatureDistribution& zeta,
                         const Policy& target, double gamma);
/// E_b[rho delta x]^T E_b[x x^T]^-1 E_b[rho delta x]
double mspbe(const Vector& w, const TabularMDP& mdp, const Policy& behavior, const Policy& target,
             const FeatureTable& features);

/// sqrt(mean_s (phi(s)^T w - v_pi(s))^2)
double rmse(const Vector& w, const TabularMDP& mdp, const Policy& target, const FeatureTable& features);
double rmse(const Vector& w, const Vector& true_values, const FeatureTable& features);

// ---------------------------------------------------------------------------

/// Running sums for off-policy LSTD; averages are sums / count.
class LSTDAccumulator {
 public:
  LSTDAccumulator(int dim, double gamma);

  void update(const Transition& t, double rho);
  long count() const { return count_; }
  int dim() const { return static_cast<int>(c_sum_.size()); }
  double gamma() const { return gamma_; }
  Matrix a() const;
  Vector c() const;

 private:
  Matrix a_sum_;
  Vector c_sum_;
  double gamma_;
  long count_ = 0;
};

inline void lstd_update(LSTDAccumulator& acc, const Transition& t, double rho) { acc.update(t, rho); }
/// A^-1 c; throws SingularAccumulator (with the condition number) when not invertible.
Vector lstd_solve(const LSTDAccumulator& acc);
/// ||A w - c||^2
double lstd_loss(const Vector& w, const Matrix& a, const Vector& c);
inline double lstd_loss(const Vector& w, const LSTDAccumulator& acc) { return lstd_loss(w, acc.a(), acc.c()); }

// ---------------------------------------------------------------------------

/// Inverse of (M + weight u v^T) from inv = M^-1. Throws DegenerateUpdate when
/// 1 + weight v^T inv u is numerically zero.
Matrix sherman_morrison(const Matrix& inv, const Vector& u, const Vector& v, double weight);

/// Maintains M and M^-1 under rank-one updates, re-inverting directly when
/// the Sherman-Morrison denominator degenerates.
class IncrementalInverse {
 public:
  explicit IncrementalInverse(Matrix m);
  void update(const Vector& u, const Vector& v, double weight);
  const Matrix& matrix() const { return m_; }
  const Matrix& inverse() const { return inv_; }
  long direct_solves() const { return direct_solves_; }

 private:
  Matrix m_;
  Matrix inv_;
  long direct_solves_ = 0;
};

// ---------------------------------------------------------------------------

struct AssumptionFlags {
  bool ergodic = false;           // 1
  bool bounded = true;            // 2 (finite support)
  bool search_control = false;    // 3
  bool model_learning = false;    // 4
  bool unique_minimizer = false;  // 5
};

struct FixedPointReport {
  std::optional<Vector> w_env, w_linear, w_nonlinear, w_star;
  AssumptionFlags assumptions;
  std::vector<std::string> notes;

  /// L2 distances between every pair of present entries, keyed "a-b".
  std::vector<std::pair<std::string, double>> distances() const;
  std::string to_json() const;
};

/// All fixed points for a tabular problem. zeta defaults to mu.
FixedPointReport fixed_point_report(const TabularProblem& problem,
                                    const std::optional<FeatureDistribution>& zeta = std::nullopt);

// ---------------------------------------------------------------------------

struct RandomMdpOptions {
  int min_states = 2, max_states = 5;
  int min_actions = 2, max_actions = 3;
  int max_features = 3;  // clipped to the state count
  double reward_density = 0.5;
  double gamma_min = 0.5, gamma_max = 0.9;
  double max_condition = 1e6;
};

/// Dirichlet(1) transitions, sparse uniform[0,1] rewards, Gaussian features,
/// Dirichlet(1) policies; rejection-sampled until the ergodicity, search-
/// control, model-learning and unique-minimiser assumptions hold.
TabularProblem random_problem(const RandomMdpOptions& options, Rng& rng);

/// Random distribution model over `support_size` random feature vectors.
DistributionModel random_distribution_model(int support_size, int dim, int num_actions, int max_outcomes, Rng& rng);

}  // namespace gdyna
