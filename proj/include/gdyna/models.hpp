#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gdyna/features.hpp"
#include "gdyna/linalg.hpp"
#include "gdyna/mdp.hpp"

namespace gdyna {

/// Expected next feature vector and expected reward for (phi, a).
struct Prediction {
  Vector next_features;
  double reward = 0.0;
};

class ExpectationModel {
 public:
  virtual ~ExpectationModel() = default;
  virtual Prediction predict(const Vector& phi, int action) const = 0;
  virtual int feature_dim() const = 0;
  virtual int num_actions() const = 0;
  virtual std::unique_ptr<ExpectationModel> clone() const = 0;
};

/// A model that learns online from single transitions.
class LearnableModel : public ExpectationModel {
 public:
  virtual void learn(const Transition& t, double step) = 0;
};

/// x_hat(phi, a) = F_a phi, r_hat(phi, a) = b_a^T phi. Zero-initialised.
class LinearExpectationModel final : public LearnableModel {
 public:
  LinearExpectationModel(int feature_dim, int num_actions);
  LinearExpectationModel(std::vector<Matrix> f, std::vector<Vector> b);

  Prediction predict(const Vector& phi, int action) const override;
  int feature_dim() const override { return static_cast<int>(b_.front().size()); }
  int num_actions() const override { return static_cast<int>(b_.size()); }
  std::unique_ptr<ExpectationModel> clone() const override;
  void learn(const Transition& t, double step) override { sgd_update(t, step); }

  /// F_a -= step (F_a phi - phi') phi^T and b_a -= step (b_a^T phi - r) phi for a = t.action.
  void sgd_update(const Transition& t, double step);

  const Matrix& f(int a) const { return f_.at(static_cast<std::size_t>(a)); }
  const Vector& b(int a) const { return b_.at(static_cast<std::size_t>(a)); }
  Matrix& f(int a) { return f_.at(static_cast<std::size_t>(a)); }
  Vector& b(int a) { return b_.at(static_cast<std::size_t>(a)); }

 private:
  std::vector<Matrix> f_;
  std::vector<Vector> b_;
};

/// One-hidden-layer network on [phi; one_hot(a)] with a tanh hidden layer
/// and a linear output [x_hat; r_hat].
class MLPExpectationModel final : public LearnableModel {
 public:
  MLPExpectationModel(int feature_dim, int num_actions, int hidden);

  Prediction predict(const Vector& phi, int action) const override;
  int feature_dim() const override { return feature_dim_; }
  int num_actions() const override { return num_actions_; }
  int hidden() const { return static_cast<int>(w1_.rows()); }
  std::unique_ptr<ExpectationModel> clone() const override;
  void learn(const Transition& t, double step) override { sgd_update(t, step); }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_xavier(std::uint64_t seed);

  /// 0.5 ||x_hat - phi'||^2 + 0.5 (r_hat - r)^2
  double loss(const Transition& t) const;
  /// Gradient of `loss` in the layout of `parameters()`.
  Vector gradient(const Transition& t) const;
  /// One plain SGD step on `loss`.
  void sgd_update(const Transition& t, double step);

  /// Flattened parameters: W1 (row-major), b1, W2 (row-major), b2.
  Vector parameters() const;
  void set_parameters(const Vector& theta);
  int num_parameters() const;

  const Matrix& w1() const { return w1_; }
  const Vector& b1() const { return b1_; }
  const Matrix& w2() const { return w2_; }
  const Vector& b2() const { return b2_; }

 private:
  struct Activations {
    Vector input, hidden, output;
  };
  Activations forward(const Vector& phi, int action) const;
  Vector input(const Vector& phi, int action) const;

  int feature_dim_;
  int num_actions_;
  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

/// Exact lookup-table model over a finite set of feature vectors.
class TableExpectationModel final : public ExpectationModel {
 public:
  TableExpectationModel(std::vector<Vector> support, std::vector<std::vector<Vector>> next,
                        std::vector<std::vector<double>> reward, std::vector<bool> supported);

  Prediction predict(const Vector& phi, int action) const override;
  int feature_dim() const override { return static_cast<int>(support_.front().size()); }
  int num_actions() const override { return static_cast<int>(next_.front().size()); }
  std::unique_ptr<ExpectationModel> clone() const override;

  int size() const { return static_cast<int>(support_.size()); }
  const Vector& support(int k) const { return support_.at(static_cast<std::size_t>(k)); }
  const Vector& next(int k, int a) const { return next_.at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(a)); }
  double reward(int k, int a) const { return reward_.at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(a)); }

 private:
  std::vector<Vector> support_;
  std::vector<std::vector<Vector>> next_;
  std::vector<std::vector<double>> reward_;
  std::vector<bool> supported_;
  std::map<Vector, int, VectorLess> index_;
};

/// p_hat(phi', r | phi, a) over a finite support.
class DistributionModel {
 public:
  struct Outcome {
    int next;  // index into support
    double reward;
    double prob;
  };

  DistributionModel(std::vector<Vector> support, int num_actions,
                    std::vector<std::vector<std::vector<Outcome>>> outcomes);

  /// Exact distribution model of a tabular MDP under behaviour b:
  /// states in H_phi are mixed with weights eta(s) / mu(phi).
  static DistributionModel from_mdp(const TabularMDP& mdp, const Policy& behavior, const FeatureTable& features);

  int size() const { return static_cast<int>(support_.size()); }
  int num_actions() const { return num_actions_; }
  const Vector& support(int k) const { return support_.at(static_cast<std::size_t>(k)); }
  const std::vector<Outcome>& outcomes(int k, int a) const {
    return outcomes_.at(static_cast<std::size_t>(k)).at(static_cast<std::size_t>(a));
  }

 private:
  std::vector<Vector> support_;
  int num_actions_;
  std::vector<std::vector<std::vector<Outcome>>> outcomes_;
};

/// First moments of a distribution model.
TableExpectationModel expectation_of(const DistributionModel& dist);

/// sum_a pi(a) sum_{phi', r} p_hat(phi', r | phi_k, a) [r + gamma phi'^T w]
double distribution_backup(const DistributionModel& dist, int k, const Vector& pi_probs, const Vector& w,
                           double gamma);
/// sum_a pi(a) [r_hat(phi, a) + gamma x_hat(phi, a)^T w]
double expectation_backup(const ExpectationModel& model, const Vector& phi, const Vector& pi_probs,
                          const Vector& w, double gamma);

/// Closed-form best linear model from exact behaviour-chain expectations.
LinearExpectationModel best_linear(const TabularMDP& mdp, const Policy& behavior, const FeatureTable& features);
/// Closed-form best non-linear model as an exact table over distinct feature vectors.
TableExpectationModel best_nonlinear(const TabularMDP& mdp, const Policy& behavior, const FeatureTable& features);

// Checkpoints: header (kind, m, |A|, hidden) then row-major weight blocks.
void save_model(const ExpectationModel& model, std::ostream& out);
std::unique_ptr<LearnableModel> load_model(std::istream& in);
std::string model_to_json(const ExpectationModel& model);
std::unique_ptr<LearnableModel> model_from_json(const std::string& text);

}  // namespace gdyna
