#pragma once

#include <cstdint>
#include <vector>

#include "gdyna/features.hpp"
#include "gdyna/linalg.hpp"
#include "gdyna/policy.hpp"
#include "gdyna/rng.hpp"

namespace gdyna {

/// Finite MDP with expected rewards r(s, a, s'). Terminal states self-loop
/// with zero reward; the behaviour chain (simulation and stationary
/// analysis) instead sends a terminal state to the restart distribution,
/// which turns an episodic task into an ergodic chain.
class TabularMDP {
 public:
  /// `transition[a](s, s')` and `reward[a](s, s')`, one S x S block per action.
  TabularMDP(std::vector<Matrix> transition, std::vector<Matrix> reward, std::vector<bool> terminal,
             double gamma, Vector restart = Vector());

  int num_states() const { return static_cast<int>(transition_.front().rows()); }
  int num_actions() const { return static_cast<int>(transition_.size()); }
  double gamma() const { return gamma_; }
  bool terminal(int s) const { return terminal_.at(static_cast<std::size_t>(s)); }
  bool has_terminals() const;
  const Matrix& transition(int a) const { return transition_.at(static_cast<std::size_t>(a)); }
  const Matrix& reward(int a) const { return reward_.at(static_cast<std::size_t>(a)); }
  const Vector& restart() const { return restart_; }

  /// Next-state distribution of the behaviour chain.
  Vector chain_row(int s, int a) const;
  double chain_reward(int s, int a, int next) const;

  /// State-to-state kernel of the behaviour chain under `policy`.
  Matrix chain_kernel(const Policy& policy) const;
  /// Episodic kernel and expected one-step reward under `policy` (terminals absorb).
  Matrix kernel(const Policy& policy) const;
  Vector expected_reward(const Policy& policy) const;

 private:
  std::vector<Matrix> transition_;
  std::vector<Matrix> reward_;
  std::vector<bool> terminal_;
  double gamma_;
  Vector restart_;
};

struct StationaryDistribution {
  Vector eta;               // over states
  FeatureDistribution mu;   // over distinct feature vectors (empty without a feature table)
  long iterations = 0;
};

/// One observed environment step. `state` / `next_state` are -1 for
/// continuous-state environments.
struct Transition {
  int state = -1;
  int action = 0;
  int next_state = -1;
  double reward = 0.0;
  Vector phi;
  Vector phi_next;
};

/// Throws NonErgodicChain unless `kernel` has a single recurrent class that is aperiodic.
void check_ergodic(const Matrix& kernel);

/// Power iteration to a 1e-12 fixed-point tolerance on the behaviour chain.
StationaryDistribution stationary_distribution(const TabularMDP& mdp, const Policy& behavior,
                                               const FeatureTable* features = nullptr);

/// v = (I - gamma P_pi)^-1 r_pi on the episodic kernel.
Vector exact_value(const TabularMDP& mdp, const Policy& target);

/// Behaviour-policy data source.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual Transition step() = 0;
  virtual int num_actions() const = 0;
  virtual int feature_dim() const = 0;
};

class TabularSimulator final : public Environment {
 public:
  TabularSimulator(TabularMDP mdp, FeatureTable features, Policy behavior, std::uint64_t seed);

  Transition step() override;
  int num_actions() const override { return mdp_.num_actions(); }
  int feature_dim() const override { return features_.dim(); }
  int state() const { return state_; }

 private:
  TabularMDP mdp_;
  FeatureTable features_;
  Policy behavior_;
  Rng rng_;
  int state_;
};

std::vector<Transition> simulate(const TabularMDP& mdp, const FeatureTable& features, const Policy& behavior,
                                 long steps, std::uint64_t seed);

}  // namespace gdyna
