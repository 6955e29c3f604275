#include "gdyna/analysis.hpp"

#include <cmath>
#include <random>

#include "json.hpp"
#include "gdyna/kernels.hpp"

namespace gdyna {

ObjectiveTerms objective_terms(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                               double gamma) {
  const int m = zeta.dim();
  ObjectiveTerms t{Matrix::Zero(m, m), Matrix::Zero(m, m), Vector::Zero(m)};
  for (int k = 0; k < zeta.size(); ++k) {
    const Vector& phi = zeta.support[static_cast<std::size_t>(k)];
    const double w = zeta.weights[static_cast<std::size_t>(k)];
    if (w == 0.0) continue;
    t.c_moment += w * phi * phi.transpose();
    const Vector pi = target.feature_probs(phi);
    for (int a = 0; a < pi.size(); ++a) {
      if (pi(a) == 0.0) continue;
      const Prediction p = model.predict(phi, a);
      t.a += w * pi(a) * phi * (phi - gamma * p.next_features).transpose();
      t.c += w * pi(a) * p.reward * phi;
    }
  }
  return t;
}

namespace {

/// Calls f(s, a, next, weight) with weight = eta(s) pi(a|s) p(next|s,a), the
/// importance-corrected behaviour measure.
template <class F>
void for_each_corrected(const TabularMDP& mdp, const Vector& eta, const Policy& behavior, const Policy& target,
                        F&& f) {
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (eta(s) == 0.0) continue;
    const Vector b = behavior.state_probs(s);
    const Vector pi = target.state_probs(s);
    for (int a = 0; a < mdp.num_actions(); ++a) {
      if (pi(a) == 0.0) continue;
      if (b(a) == 0.0) throw UnsupportedAction("behaviour policy never takes an action the target policy takes");
      const Vector row = mdp.chain_row(s, a);
      for (int next = 0; next < mdp.num_states(); ++next)
        if (row(next) > 0.0) f(s, a, next, eta(s) * pi(a) * row(next));
    }
  }
}

}  // namespace

EnvTerms env_terms(const TabularMDP& mdp, const Policy& behavior, const Policy& target, const FeatureTable& features) {
  const auto sd = stationary_distribution(mdp, behavior, &features);
  const int m = features.dim();
  EnvTerms t{Matrix::Zero(m, m), Matrix::Zero(m, m), Vector::Zero(m)};
  for (int s = 0; s < mdp.num_states(); ++s) {
    const Vector x = features.state(s);
    t.c_moment += sd.eta(s) * x * x.transpose();
  }
  for_each_corrected(mdp, sd.eta, behavior, target, [&](int s, int a, int next, double w) {
    const Vector x = features.state(s);
    t.a += w * x * (x - mdp.gamma() * features.state(next)).transpose();
    t.c += w * mdp.chain_reward(s, a, next) * x;
  });
  return t;
}

Vector fixed_point_env(const TabularMDP& mdp, const Policy& behavior, const Policy& target,
                       const FeatureTable& features) {
  const EnvTerms t = env_terms(mdp, behavior, target, features);
  return checked_solve<SingularKeyMatrix>(t.a, t.c, "E_b[rho x (x - gamma x')^T]").x;
}

Vector fixed_point_linear(const LinearExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                          double gamma) {
  const int m = zeta.dim();
  Matrix moment = Matrix::Zero(m, m), f_moment = Matrix::Zero(m, m), b_moment_sum = Matrix::Zero(m, 1);
  for (int k = 0; k < zeta.size(); ++k) {
    const Vector& phi = zeta.support[static_cast<std::size_t>(k)];
    const double w = zeta.weights[static_cast<std::size_t>(k)];
    if (w == 0.0) continue;
    const Matrix outer = phi * phi.transpose();
    moment += w * outer;
    const Vector pi = target.feature_probs(phi);
    for (int a = 0; a < pi.size(); ++a) {
      if (pi(a) == 0.0) continue;
      f_moment += w * pi(a) * model.f(a) * outer;
      b_moment_sum += w * pi(a) * outer * model.b(a);
    }
  }
  const Matrix inv = checked_inverse<SingularMoment>(moment, "E_zeta[phi phi^T]");
  const Matrix f = f_moment * inv;
  const Vector b = inv * b_moment_sum;
  const Matrix resolvent = Matrix::Identity(m, m) - gamma * f.transpose();
  return checked_solve<SingularResolvent>(resolvent, b, "I - gamma F^T").x;
}

Vector fixed_point_nonlinear(const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                             double gamma) {
  const ObjectiveTerms t = objective_terms(model, zeta, target, gamma);
  return checked_solve<SingularKeyMatrix>(t.a, t.c, "E_zeta[phi (phi - gamma x_hat)^T]").x;
}

Vector mb_mspbe_minimizer(const ObjectiveTerms& terms) {
  const Matrix c_inv = checked_inverse<SingularMoment>(terms.c_moment, "E_zeta[phi phi^T]");
  const Matrix hessian = terms.a.transpose() * c_inv * terms.a;
  const Vector rhs = terms.a.transpose() * (c_inv * terms.c);
  return checked_solve<SingularKeyMatrix>(hessian, rhs, "A^T C^-1 A").x;
}

namespace {

/// E_zeta[Delta phi] by direct enumeration of model TD errors.
Vector expected_model_update(const Vector& w, const ExpectationModel& model, const FeatureDistribution& zeta,
                             const Policy& target, double gamma, Matrix* moment, Matrix* factor) {
  const int m = zeta.dim();
  if (w.size() != m) throw DimensionMismatch("weights dimension != feature dimension");
  Vector g = Vector::Zero(m);
  if (moment) moment->setZero(m, m);
  if (factor) factor->setZero(m, m);
  for (int k = 0; k < zeta.size(); ++k) {
    const Vector& phi = zeta.support[static_cast<std::size_t>(k)];
    const double wk = zeta.weights[static_cast<std::size_t>(k)];
    if (wk == 0.0) continue;
    if (moment) *moment += wk * phi * phi.transpose();
    const Vector pi = target.feature_probs(phi);
    for (int a = 0; a < pi.size(); ++a) {
      if (pi(a) == 0.0) continue;
      const Prediction p = model.predict(phi, a);
      const double delta = p.reward + gamma * w.dot(p.next_features) - w.dot(phi);
      g += wk * pi(a) * delta * phi;
      if (factor) *factor += wk * pi(a) * (gamma * p.next_features - phi) * phi.transpose();
    }
  }
  return g;
}

}  // namespace

double mb_mspbe(const Vector& w, const ExpectationModel& model, const FeatureDistribution& zeta, const Policy& target,
                double gamma) {
  Matrix moment;
  const Vector g = expected_model_update(w, model, zeta, target, gamma, &moment, nullptr);
  return g.dot(checked_solve<SingularMoment>(moment, g, "E_zeta[phi phi^T]").x);
}

Vector mb_mspbe_gradient(const Vector& w, const ExpectationModel& model, const FeatureDistribution& zeta,
                         const Policy& target, double gamma) {
  Matrix moment, factor;
  const Vector g = expected_model_update(w, model, zeta, target, gamma, &moment, &factor);
  return 2.0 * factor * checked_solve<SingularMoment>(moment, g, "E_zeta[phi phi^T]").x;
}

double mspbe(const Vector& w, const TabularMDP& mdp, const Policy& behavior, const Policy& target,
             const FeatureTable& features) {
  const auto sd = stationary_distribution(mdp, behavior, &features);
  const int m = features.dim();
  if (w.size() != m) throw DimensionMismatch("mspbe: weights dimension");
  Matrix moment = Matrix::Zero(m, m);
  for (int s = 0; s < mdp.num_states(); ++s) {
    const Vector x = features.state(s);
    moment += sd.eta(s) * x * x.transpose();
  }
  Vector g = Vector::Zero(m);
  for_each_corrected(mdp, sd.eta, behavior, target, [&](int s, int a, int next, double weight) {
    const Vector x = features.state(s);
    const double delta = mdp.chain_reward(s, a, next) + mdp.gamma() * w.dot(features.state(next)) - w.dot(x);
    g += weight * delta * x;
  });
  return g.dot(checked_solve<SingularMoment>(moment, g, "E_b[x x^T]").x);
}

double rmse(const Vector& w, const Vector& true_values, const FeatureTable& features) {
  if (w.size() != features.dim()) throw DimensionMismatch("rmse: weights dimension");
  const Vector err = features.matrix() * w - true_values;
  return std::sqrt(err.squaredNorm() / static_cast<double>(err.size()));
}

double rmse(const Vector& w, const TabularMDP& mdp, const Policy& target, const FeatureTable& features) {
  return rmse(w, exact_value(mdp, target), features);
}

// ---------------------------------------------------------------------------

LSTDAccumulator::LSTDAccumulator(int dim, double gamma)
    : a_sum_(Matrix::Zero(dim, dim)), c_sum_(Vector::Zero(dim)), gamma_(gamma) {}

void LSTDAccumulator::update(const Transition& t, double rho) {
  if (t.phi.size() != dim() || t.phi_next.size() != dim()) throw DimensionMismatch("lstd: feature dimension");
  if (!(rho >= 0.0)) throw ConfigError("lstd: importance ratio must be non-negative");
  ++count_;
  if (rho == 0.0) return;
  const Vector diff = t.phi - gamma_ * t.phi_next;
  kernels::rank1_update(a_sum_, t.phi, diff, rho);
  c_sum_ += (rho * t.reward) * t.phi;
}

Matrix LSTDAccumulator::a() const {
  if (count_ == 0) return a_sum_;
  return a_sum_ / static_cast<double>(count_);
}

Vector LSTDAccumulator::c() const {
  if (count_ == 0) return c_sum_;
  return c_sum_ / static_cast<double>(count_);
}

Vector lstd_solve(const LSTDAccumulator& acc) {
  if (acc.count() == 0) throw SingularAccumulator("lstd: no transitions accumulated");
  return checked_solve<SingularAccumulator>(acc.a(), acc.c(), "A_LSTD").x;
}

double lstd_loss(const Vector& w, const Matrix& a, const Vector& c) {
  if (w.size() != c.size()) throw DimensionMismatch("lstd_loss: weights dimension");
  return (a * w - c).squaredNorm();
}

// ---------------------------------------------------------------------------

Matrix sherman_morrison(const Matrix& inv, const Vector& u, const Vector& v, double weight) {
  if (inv.rows() != u.size() || inv.cols() != v.size()) throw DimensionMismatch("sherman_morrison: shapes");
  const Vector inv_u = inv * u;
  const Vector v_inv = inv.transpose() * v;
  const double denom = 1.0 + weight * v.dot(inv_u);
  if (std::abs(denom) < 1e-10) throw DegenerateUpdate("sherman_morrison: denominator is numerically zero");
  return inv - (weight / denom) * inv_u * v_inv.transpose();
}

IncrementalInverse::IncrementalInverse(Matrix m)
    : m_(std::move(m)), inv_(checked_inverse<SingularSystem>(m_, "incremental inverse seed")) {}

void IncrementalInverse::update(const Vector& u, const Vector& v, double weight) {
  m_ += weight * u * v.transpose();
  try {
    inv_ = sherman_morrison(inv_, u, v, weight);
  } catch (const DegenerateUpdate&) {
    inv_ = checked_inverse<SingularSystem>(m_, "incremental inverse");
    ++direct_solves_;
  }
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, double>> FixedPointReport::distances() const {
  const std::pair<const char*, const std::optional<Vector>*> entries[] = {
      {"w_env", &w_env}, {"w_linear", &w_linear}, {"w_nonlinear", &w_nonlinear}, {"w_star", &w_star}};
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j)
      if (*entries[i].second && *entries[j].second)
        out.emplace_back(std::string(entries[i].first) + "-" + entries[j].first,
                         (**entries[i].second - **entries[j].second).norm());
  return out;
}

std::string FixedPointReport::to_json() const {
  nlohmann::json j;
  auto put = [&j](const char* key, const std::optional<Vector>& v) {
    if (v) j[key] = std::vector<double>(v->data(), v->data() + v->size());
    else j[key] = nullptr;
  };
  put("w_env", w_env);
  put("w_linear", w_linear);
  put("w_nonlinear", w_nonlinear);
  put("w_star", w_star);
  nlohmann::json d = nlohmann::json::object();
  for (const auto& [k, v] : distances()) d[k] = v;
  j["distances"] = d;
  j["assumptions"] = {{"ergodic", assumptions.ergodic},
                      {"bounded", assumptions.bounded},
                      {"search_control_moment", assumptions.search_control},
                      {"model_learning_moment", assumptions.model_learning},
                      {"unique_minimizer", assumptions.unique_minimizer}};
  j["notes"] = notes;
  return j.dump(2);
}

FixedPointReport fixed_point_report(const TabularProblem& problem, const std::optional<FeatureDistribution>& zeta_in) {
  FixedPointReport r;
  const auto& mdp = problem.mdp;
  StationaryDistribution sd;
  try {
    sd = stationary_distribution(mdp, problem.behavior, &problem.features);
    r.assumptions.ergodic = true;
  } catch (const NonErgodicChain& e) {
    r.notes.push_back(e.what());
    return r;
  }
  const FeatureDistribution zeta = zeta_in ? *zeta_in : sd.mu;
  const auto search = feature_moment_checks(zeta);
  r.assumptions.search_control = search.second_moment_ok;
  const auto learn = feature_moment_checks(sd.mu, &problem.behavior);
  r.assumptions.model_learning = learn.per_action_ok;
  for (const auto& msg : search.messages) r.notes.push_back(msg);
  for (const auto& msg : learn.messages) r.notes.push_back(msg);

  auto attempt = [&r](const char* what, auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      r.notes.push_back(std::string(what) + ": " + e.what());
    }
  };
  attempt("w_env", [&] { r.w_env = fixed_point_env(mdp, problem.behavior, problem.target, problem.features); });
  if (r.assumptions.model_learning)
    attempt("w_linear", [&] {
      r.w_linear = fixed_point_linear(best_linear(mdp, problem.behavior, problem.features), zeta, problem.target,
                                      mdp.gamma());
    });
  const auto best = best_nonlinear(mdp, problem.behavior, problem.features);
  attempt("w_nonlinear", [&] {
    r.w_nonlinear = fixed_point_nonlinear(best, zeta, problem.target, mdp.gamma());
    r.assumptions.unique_minimizer = true;
  });
  attempt("w_star", [&] { r.w_star = mb_mspbe_minimizer(objective_terms(best, zeta, problem.target, mdp.gamma())); });
  return r;
}

// ---------------------------------------------------------------------------

namespace {

Vector dirichlet(int n, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.sum();
}

int uniform_int(int lo, int hi, Rng& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

}  // namespace

TabularProblem random_problem(const RandomMdpOptions& opt, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int n = uniform_int(opt.min_states, opt.max_states, rng);
    const int na = uniform_int(opt.min_actions, opt.max_actions, rng);
    const int m = uniform_int(1, std::min(opt.max_features, n), rng);
    const double gamma = std::uniform_real_distribution<double>(opt.gamma_min, opt.gamma_max)(rng);
    std::vector<Matrix> p(static_cast<std::size_t>(na), Matrix::Zero(n, n)),
        r(static_cast<std::size_t>(na), Matrix::Zero(n, n));
    bool any_reward = false;
    for (int a = 0; a < na; ++a)
      for (int s = 0; s < n; ++s) {
        p[static_cast<std::size_t>(a)].row(s) = dirichlet(n, rng).transpose();
        for (int next = 0; next < n; ++next)
          if (uniform01(rng) < opt.reward_density) {
            r[static_cast<std::size_t>(a)](s, next) = uniform01(rng);
            any_reward = true;
          }
      }
    Matrix phi(n, m), b(n, na), pi(n, na);
    for (int s = 0; s < n; ++s) {
      for (int j = 0; j < m; ++j) phi(s, j) = normal(rng);
      b.row(s) = dirichlet(na, rng).transpose();
      pi.row(s) = dirichlet(na, rng).transpose();
    }
    if (!any_reward) continue;
    FeatureTable table(phi);
    if (table.num_distinct() != n) continue;
    TabularProblem prob{"random", TabularMDP(std::move(p), std::move(r), std::vector<bool>(n, false), gamma), table,
                        bind_features(Policy::from_table(b), table), bind_features(Policy::from_table(pi), table),
                        Vector::Zero(m), {}};
    try {
      const auto sd = stationary_distribution(prob.mdp, prob.behavior, &prob.features);
      const auto diag = feature_moment_checks(sd.mu, &prob.behavior);
      if (!diag.second_moment_ok || !diag.per_action_ok) continue;
      Matrix moment = Matrix::Zero(m, m);
      for (int s = 0; s < n; ++s) moment += sd.eta(s) * phi.row(s).transpose() * phi.row(s);
      if (condition_number(moment) > opt.max_condition) continue;
      bool ok = true;
      for (int a = 0; a < na && ok; ++a) {
        Matrix ma = Matrix::Zero(m, m);
        for (int s = 0; s < n; ++s) ma += sd.eta(s) * b(s, a) * phi.row(s).transpose() * phi.row(s);
        ok = condition_number(ma) <= opt.max_condition;
      }
      if (!ok) continue;
      const auto best = best_nonlinear(prob.mdp, prob.behavior, prob.features);
      const auto terms = objective_terms(best, sd.mu, prob.target, gamma);
      if (condition_number(terms.a) > opt.max_condition) continue;
      const auto env = env_terms(prob.mdp, prob.behavior, prob.target, prob.features);
      if (condition_number(env.a) > opt.max_condition) continue;
    } catch (const NumericalError&) {
      continue;
    }
    return prob;
  }
  throw NumericalError("random_problem: no instance satisfied the assumptions");
}

DistributionModel random_distribution_model(int support_size, int dim, int num_actions, int max_outcomes, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> support;
  for (int k = 0; k < support_size; ++k) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = normal(rng);
    support.push_back(v);
  }
  std::vector<std::vector<std::vector<DistributionModel::Outcome>>> outcomes(static_cast<std::size_t>(support_size));
  for (auto& per_action : outcomes) {
    per_action.resize(static_cast<std::size_t>(num_actions));
    for (auto& row : per_action) {
      const int count = uniform_int(1, max_outcomes, rng);
      const Vector probs = dirichlet(count, rng);
      for (int i = 0; i < count; ++i)
        row.push_back({uniform_int(0, support_size - 1, rng), 2.0 * uniform01(rng) - 1.0, probs(i)});
    }
  }
  return DistributionModel(std::move(support), num_actions, std::move(outcomes));
}

}  // namespace gdyna
