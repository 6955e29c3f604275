#pragma once

#include <cstdint>
#include <deque>
#include <string>

#include "gdyna/features.hpp"
#include "gdyna/linalg.hpp"
#include "gdyna/models.hpp"
#include "gdyna/policy.hpp"
#include "gdyna/rng.hpp"

namespace gdyna {

/// a0 / (1 + k / tau)^power; power = 0 gives a constant step.
struct StepSchedule {
  double a0 = 0.01;
  double tau = 1.0;
  double power = 0.0;

  static StepSchedule constant(double value) { return {value, 1.0, 0.0}; }
  static StepSchedule decaying(double a0, double tau, double power) { return {a0, tau, power}; }

  double at(long k) const;
  /// Sum diverges and sum of squares converges.
  bool robbins_monro() const { return power > 0.5 && power <= 1.0; }
};

/// Where planning starts: the most recently observed feature vector, or a
/// uniform draw from a ring buffer of recent ones.
class SearchControl {
 public:
  enum class Mode { kLastSeen, kUniformBuffer };

  SearchControl(Mode mode, std::size_t capacity, std::uint64_t seed);

  void observe(const Vector& phi);
  Vector draw();
  std::size_t size() const { return buffer_.size(); }
  Mode mode() const { return mode_; }

 private:
  Mode mode_;
  std::size_t capacity_;
  std::deque<Vector> buffer_;
  Rng rng_;
};

/// r_hat + gamma w^T x_hat - w^T phi
double model_td_error(const Vector& w, const Prediction& p, const Vector& phi, double gamma);

struct TDPlannerState {
  Vector w;
  double alpha = 0.0;
};

/// Sampled TD(0) step on a simulated transition: w += alpha Delta phi.
void td0_plan_step(TDPlannerState& state, const ExpectationModel& model, const Vector& phi, int action,
                   double gamma);

struct GradientDynaState {
  Vector w;
  Matrix v;  // fast estimate of E[(gamma x_hat - phi) phi^T] E[phi phi^T]^-1
  StepSchedule alpha;
  StepSchedule beta;
  long k = 0;

  GradientDynaState(Vector w0, StepSchedule alpha, StepSchedule beta);
};

/// Algorithm core for a given (phi, a):
///   w <- w - alpha_k V_k Delta_k phi
///   V <- V + beta_k ((gamma x_hat - phi) phi^T - V_k phi phi^T)
/// Both updates use the pre-update V_k. Throws NonFiniteUpdate on NaN/Inf.
void gradient_dyna_update(GradientDynaState& state, const ExpectationModel& model, const Vector& phi, int action,
                          double gamma);

/// Draws phi from search control, A ~ pi(.|phi), then applies the update.
void gradient_dyna_step(GradientDynaState& state, const ExpectationModel& model, SearchControl& sc,
                        const Policy& target, double gamma, Rng& rng);

/// Fast-timescale limit E_zeta[(gamma x_hat - phi) phi^T] E_zeta[phi phi^T]^-1 by enumeration.
Matrix vstar_expected(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                      double gamma);

}  // namespace gdyna
