#include "gdyna/planners.hpp"

#include <cmath>

#include "gdyna/kernels.hpp"

namespace gdyna {

double StepSchedule::at(long k) const {
  if (power == 0.0) return a0;
  return a0 / std::pow(1.0 + static_cast<double>(k) / tau, power);
}

SearchControl::SearchControl(Mode mode, std::size_t capacity, std::uint64_t seed)
    : mode_(mode), capacity_(mode == Mode::kLastSeen ? 1 : capacity), rng_(seed) {
  if (capacity_ == 0) throw ConfigError("search control: capacity must be positive");
}

void SearchControl::observe(const Vector& phi) {
  if (buffer_.size() == capacity_) buffer_.pop_front();
  buffer_.push_back(phi);
}

Vector SearchControl::draw() {
  if (buffer_.empty()) throw EmptyBuffer("search control: no feature vector observed yet");
  if (mode_ == Mode::kLastSeen) return buffer_.back();
  std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
  return buffer_[pick(rng_)];
}

double model_td_error(const Vector& w, const Prediction& p, const Vector& phi, double gamma) {
  return p.reward + gamma * w.dot(p.next_features) - w.dot(phi);
}

void td0_plan_step(TDPlannerState& state, const ExpectationModel& model, const Vector& phi, int action,
                   double gamma) {
  if (phi.size() != state.w.size()) throw DimensionMismatch("td0: feature dimension mismatch");
  const Prediction p = model.predict(phi, action);
  const double delta = model_td_error(state.w, p, phi, gamma);
  state.w += state.alpha * delta * phi;
  if (!state.w.allFinite()) throw NonFiniteUpdate("td0: weights became non-finite");
}

GradientDynaState::GradientDynaState(Vector w0, StepSchedule a, StepSchedule b)
    : w(std::move(w0)), v(Matrix::Zero(w.size(), w.size())), alpha(a), beta(b) {}

void gradient_dyna_update(GradientDynaState& state, const ExpectationModel& model, const Vector& phi, int action,
                          double gamma) {
  if (phi.size() != state.w.size()) throw DimensionMismatch("gradient dyna: feature dimension mismatch");
  ++state.k;
  const double alpha = state.alpha.at(state.k);
  const double beta = state.beta.at(state.k);
  const Prediction p = model.predict(phi, action);
  const double delta = model_td_error(state.w, p, phi, gamma);

  Vector v_phi;  // V_k phi, read before V changes
  kernels::matvec(state.v, phi, v_phi);
  state.w -= (alpha * delta) * v_phi;

  // (gamma x_hat - phi) phi^T - V_k phi phi^T = u phi^T
  const Vector u = gamma * p.next_features - phi - v_phi;
  if (!u.allFinite() || !state.w.allFinite())
    throw NonFiniteUpdate("gradient dyna: update became non-finite", state.k);
  kernels::rank1_update(state.v, u, phi, beta);
}

void gradient_dyna_step(GradientDynaState& state, const ExpectationModel& model, SearchControl& sc,
                        const Policy& target, double gamma, Rng& rng) {
  const Vector phi = sc.draw();
  const int action = target.sample_feature(phi, rng);
  gradient_dyna_update(state, model, phi, action, gamma);
}

Matrix vstar_expected(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                      double gamma) {
  const int m = zeta.dim();
  Matrix cross = Matrix::Zero(m, m), moment = Matrix::Zero(m, m);
  for (int k = 0; k < zeta.size(); ++k) {
    const Vector& phi = zeta.support[static_cast<std::size_t>(k)];
    const double w = zeta.weights[static_cast<std::size_t>(k)];
    if (w == 0.0) continue;
    moment += w * phi * phi.transpose();
    const Vector pi = target.feature_probs(phi);
    for (int a = 0; a < pi.size(); ++a) {
      if (pi(a) == 0.0) continue;
      const Prediction p = model.predict(phi, a);
      cross += w * pi(a) * (gamma * p.next_features - phi) * phi.transpose();
    }
  }
  const Matrix inv = checked_inverse<SingularMoment>(moment, "E_zeta[phi phi^T]");
  return cross * inv;
}

}  // namespace gdyna
