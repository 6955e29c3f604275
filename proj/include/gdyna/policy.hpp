#pragma once

#include <functional>
#include <optional>

#include "gdyna/linalg.hpp"
#include "gdyna/rng.hpp"

namespace gdyna {

/// A stationary policy. Policies act on feature vectors; tabular policies
/// additionally carry a per-state probability table used by the exact
/// solvers and the tabular simulator.
class Policy {
 public:
  using Rule = std::function<Vector(const Vector& phi)>;

  Policy() = default;

  /// State-indexed table (rows sum to one). Feature lookups require a rule,
  /// see `bind_features`.
  static Policy from_table(Matrix probs);
  static Policy from_rule(int num_actions, Rule rule);
  static Policy from_table_and_rule(Matrix probs, Rule rule);

  int num_actions() const { return num_actions_; }
  bool has_table() const { return table_.has_value(); }
  bool has_rule() const { return static_cast<bool>(rule_); }
  const Matrix& table() const;

  Vector state_probs(int state) const;
  Vector feature_probs(const Vector& phi) const;

  int sample_state(int state, Rng& rng) const { return sample_discrete(state_probs(state), rng); }
  int sample_feature(const Vector& phi, Rng& rng) const { return sample_discrete(feature_probs(phi), rng); }

 private:
  int num_actions_ = 0;
  std::optional<Matrix> table_;
  Rule rule_;
};

/// Throws InvalidProbability unless every entry is in [0,1] and the vector sums to 1 within tol.
void check_distribution(const Vector& p, double tol, const char* what);

}  // namespace gdyna
