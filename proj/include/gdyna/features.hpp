#pragma once

#include <map>
#include <optional>
#include <vector>

#include "gdyna/linalg.hpp"
#include "gdyna/policy.hpp"

namespace gdyna {

/// Unit basis vector e_state in R^num_states.
Vector one_hot(int num_states, int state);

/// Feature matrix of Baird's star counterexample: 7 states x 8 features.
/// Upper states i < 6 map to 2 e_i + e_7; the lower state maps to e_6 + 2 e_7.
Matrix baird_feature_matrix();

/// Grid tile coder with asymmetric offsets: tiling t is displaced by
/// t / num_tilings of a tile width in every dimension. Features are binary
/// and exactly one tile per tiling is active.
class TileCoder {
 public:
  TileCoder(int num_tilings, std::vector<int> tiles_per_dim, std::vector<double> lower,
            std::vector<double> upper);

  int num_tilings() const { return num_tilings_; }
  int dims() const { return static_cast<int>(tiles_.size()); }
  int tiles_per_tiling() const { return tiles_per_tiling_; }
  int size() const { return num_tilings_ * tiles_per_tiling_; }
  const std::vector<int>& tiles_per_dim() const { return tiles_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }

  /// Active tile index per tiling (points are clipped into the box).
  std::vector<int> active_tiles(const Vector& point) const;
  Vector encode(const Vector& point) const;

  /// Centre of the region of input space that produces `phi`. Throws
  /// DimensionMismatch if `phi` is not a valid encoding.
  Vector decode(const Vector& phi) const;

 private:
  int cell(int tiling, int dim, double x) const;

  int num_tilings_;
  std::vector<int> tiles_;
  std::vector<double> lower_, upper_, width_;
  int tiles_per_tiling_;
};

/// Lexicographic order so feature vectors can key ordered maps.
struct VectorLess {
  bool operator()(const Vector& a, const Vector& b) const;
};

/// Feature vectors of every state of a tabular MDP together with the
/// partition of states into groups H_phi sharing a feature vector.
class FeatureTable {
 public:
  FeatureTable() = default;
  /// Rows of `phi` are state feature vectors.
  explicit FeatureTable(Matrix phi);

  int num_states() const { return static_cast<int>(phi_.rows()); }
  int dim() const { return static_cast<int>(phi_.cols()); }
  const Matrix& matrix() const { return phi_; }
  Vector state(int s) const;

  int num_distinct() const { return static_cast<int>(distinct_.size()); }
  const Vector& distinct(int k) const { return distinct_.at(static_cast<std::size_t>(k)); }
  /// Index of the distinct feature vector of state s.
  int group_of(int s) const { return group_of_.at(static_cast<std::size_t>(s)); }
  /// States in H_phi for distinct index k.
  const std::vector<int>& group(int k) const { return groups_.at(static_cast<std::size_t>(k)); }
  std::optional<int> find(const Vector& phi) const;

 private:
  Matrix phi_;
  std::vector<Vector> distinct_;
  std::vector<int> group_of_;
  std::vector<std::vector<int>> groups_;
  std::map<Vector, int, VectorLess> index_;
};

/// Finite distribution over feature vectors (zeta for search control, or mu).
struct FeatureDistribution {
  std::vector<Vector> support;
  std::vector<double> weights;

  int size() const { return static_cast<int>(support.size()); }
  int dim() const { return support.empty() ? 0 : static_cast<int>(support.front().size()); }
  /// mu(phi) = sum of eta over H_phi.
  static FeatureDistribution aggregate(const FeatureTable& table, const Vector& eta);
  static FeatureDistribution uniform(const FeatureTable& table);
};

/// Attach a feature-vector rule to a state-indexed policy by looking the
/// vector up in `table`. Throws ConfigError if states sharing a feature
/// vector disagree.
Policy bind_features(const Policy& policy, const FeatureTable& table);

struct MomentDiagnostics {
  double second_moment_min_sv = 0.0;          // E_zeta[phi phi^T]
  std::vector<double> per_action_min_sv;      // E[1(A=a) phi phi^T], when a behavior policy is given
  bool second_moment_ok = false;
  bool per_action_ok = true;
  std::vector<std::string> messages;
};

/// Smallest singular values of the search-control second moment and of the
/// per-action moments under `behavior`. Values below `tol` are flagged.
MomentDiagnostics feature_moment_checks(const FeatureDistribution& dist, const Policy* behavior = nullptr,
                                        double tol = 1e-10);

}  // namespace gdyna
