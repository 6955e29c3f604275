#include "gdyna/policy.hpp"

#include <cmath>
#include <string>

namespace gdyna {

void check_distribution(const Vector& p, double tol, const char* what) {
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!(p(i) >= 0.0 && p(i) <= 1.0))
      throw InvalidProbability(std::string(what) + ": probability outside [0,1]");
  if (std::abs(p.sum() - 1.0) > tol)
    throw InvalidProbability(std::string(what) + ": probabilities do not sum to 1");
}

Policy Policy::from_table(Matrix probs) {
  for (Eigen::Index s = 0; s < probs.rows(); ++s) check_distribution(probs.row(s).transpose(), 1e-12, "policy");
  Policy p;
  p.num_actions_ = static_cast<int>(probs.cols());
  p.table_ = std::move(probs);
  return p;
}

Policy Policy::from_rule(int num_actions, Rule rule) {
  if (num_actions <= 0) throw ConfigError("policy needs at least one action");
  Policy p;
  p.num_actions_ = num_actions;
  p.rule_ = std::move(rule);
  return p;
}

Policy Policy::from_table_and_rule(Matrix probs, Rule rule) {
  Policy p = from_table(std::move(probs));
  p.rule_ = std::move(rule);
  return p;
}

const Matrix& Policy::table() const {
  if (!table_) throw ConfigError("policy has no state table");
  return *table_;
}

Vector Policy::state_probs(int state) const {
  const Matrix& t = table();
  if (state < 0 || state >= t.rows()) throw IndexOutOfRange("policy: state out of range");
  return t.row(state).transpose();
}

Vector Policy::feature_probs(const Vector& phi) const {
  if (!rule_) throw ConfigError("policy is not bound to feature vectors");
  return rule_(phi);
}

}  // namespace gdyna
