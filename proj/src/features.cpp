#include "gdyna/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gdyna {

Vector one_hot(int num_states, int state) {
  if (num_states <= 0 || state < 0 || state >= num_states)
    throw IndexOutOfRange("one_hot: state " + std::to_string(state) + " outside [0, " +
                          std::to_string(num_states) + ")");
  Vector v = Vector::Zero(num_states);
  v(state) = 1.0;
  return v;
}

Matrix baird_feature_matrix() {
  Matrix phi = Matrix::Zero(7, 8);
  for (int i = 0; i < 6; ++i) {
    phi(i, i) = 2.0;
    phi(i, 7) = 1.0;
  }
  phi(6, 6) = 1.0;
  phi(6, 7) = 2.0;
  return phi;
}

// ---------------------------------------------------------------------------

TileCoder::TileCoder(int num_tilings, std::vector<int> tiles_per_dim, std::vector<double> lower,
                     std::vector<double> upper)
    : num_tilings_(num_tilings), tiles_(std::move(tiles_per_dim)), lower_(std::move(lower)),
      upper_(std::move(upper)) {
  if (num_tilings_ <= 0) throw ConfigError("tile coder: num_tilings must be positive");
  if (tiles_.empty() || tiles_.size() != lower_.size() || tiles_.size() != upper_.size())
    throw DimensionMismatch("tile coder: tiles/bounds dimension mismatch");
  tiles_per_tiling_ = 1;
  for (std::size_t d = 0; d < tiles_.size(); ++d) {
    if (tiles_[d] <= 0) throw ConfigError("tile coder: tiles per dimension must be positive");
    if (!(upper_[d] > lower_[d])) throw ConfigError("tile coder: empty bounds");
    width_.push_back((upper_[d] - lower_[d]) / tiles_[d]);
    tiles_per_tiling_ *= tiles_[d];
  }
}

int TileCoder::cell(int tiling, int dim, double x) const {
  const auto d = static_cast<std::size_t>(dim);
  x = std::clamp(x, lower_[d], upper_[d]);
  const double u = (x - lower_[d]) / width_[d] + static_cast<double>(tiling) / num_tilings_;
  const int c = static_cast<int>(std::floor(u));
  return std::clamp(c, 0, tiles_[d] - 1);
}

std::vector<int> TileCoder::active_tiles(const Vector& point) const {
  if (point.size() != dims()) throw DimensionMismatch("tile coder: point dimension mismatch");
  std::vector<int> out(static_cast<std::size_t>(num_tilings_));
  for (int t = 0; t < num_tilings_; ++t) {
    int index = 0;
    int base = 1;
    for (int d = 0; d < dims(); ++d) {
      index += cell(t, d, point(d)) * base;
      base *= tiles_[static_cast<std::size_t>(d)];
    }
    out[static_cast<std::size_t>(t)] = t * tiles_per_tiling_ + index;
  }
  return out;
}

Vector TileCoder::encode(const Vector& point) const {
  Vector phi = Vector::Zero(size());
  for (const int i : active_tiles(point)) phi(i) = 1.0;
  return phi;
}

Vector TileCoder::decode(const Vector& phi) const {
  if (phi.size() != size()) throw DimensionMismatch("tile coder: feature dimension mismatch");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lo(static_cast<std::size_t>(dims()), 0.0), hi(static_cast<std::size_t>(dims()));
  for (int d = 0; d < dims(); ++d) hi[static_cast<std::size_t>(d)] = tiles_[static_cast<std::size_t>(d)];
  for (int t = 0; t < num_tilings_; ++t) {
    int active = -1;
    for (int i = 0; i < tiles_per_tiling_; ++i) {
      const double v = phi(t * tiles_per_tiling_ + i);
      if (v == 0.0) continue;
      if (v != 1.0 || active >= 0) throw DimensionMismatch("tile coder: not a valid tile encoding");
      active = i;
    }
    if (active < 0) throw DimensionMismatch("tile coder: tiling without an active tile");
    const double shift = static_cast<double>(t) / num_tilings_;
    for (int d = 0; d < dims(); ++d) {
      const auto ds = static_cast<std::size_t>(d);
      const int c = active % tiles_[ds];
      active /= tiles_[ds];
      const double cell_lo = c == 0 ? -inf : c - shift;
      const double cell_hi = c == tiles_[ds] - 1 ? inf : c + 1 - shift;
      lo[ds] = std::max(lo[ds], cell_lo);
      hi[ds] = std::min(hi[ds], cell_hi);
    }
  }
  Vector point(dims());
  for (int d = 0; d < dims(); ++d) {
    const auto ds = static_cast<std::size_t>(d);
    point(d) = lower_[ds] + 0.5 * (lo[ds] + hi[ds]) * width_[ds];
  }
  return point;
}

// ---------------------------------------------------------------------------

bool VectorLess::operator()(const Vector& a, const Vector& b) const {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

FeatureTable::FeatureTable(Matrix phi) : phi_(std::move(phi)) {
  if (!phi_.allFinite()) throw ConfigError("feature table: non-finite feature entries");
  group_of_.resize(static_cast<std::size_t>(phi_.rows()));
  for (Eigen::Index s = 0; s < phi_.rows(); ++s) {
    Vector row = phi_.row(s).transpose();
    auto [it, inserted] = index_.try_emplace(row, static_cast<int>(distinct_.size()));
    if (inserted) {
      distinct_.push_back(row);
      groups_.emplace_back();
    }
    group_of_[static_cast<std::size_t>(s)] = it->second;
    groups_[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(s));
  }
}

Vector FeatureTable::state(int s) const {
  if (s < 0 || s >= num_states()) throw IndexOutOfRange("feature table: state out of range");
  return phi_.row(s).transpose();
}

std::optional<int> FeatureTable::find(const Vector& phi) const {
  const auto it = index_.find(phi);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

FeatureDistribution FeatureDistribution::aggregate(const FeatureTable& table, const Vector& eta) {
  if (eta.size() != table.num_states()) throw DimensionMismatch("aggregate: eta size != states");
  FeatureDistribution d;
  for (int k = 0; k < table.num_distinct(); ++k) {
    double w = 0.0;
    for (const int s : table.group(k)) w += eta(s);
    d.support.push_back(table.distinct(k));
    d.weights.push_back(w);
  }
  return d;
}

FeatureDistribution FeatureDistribution::uniform(const FeatureTable& table) {
  FeatureDistribution d;
  for (int k = 0; k < table.num_distinct(); ++k) {
    d.support.push_back(table.distinct(k));
    d.weights.push_back(1.0 / table.num_distinct());
  }
  return d;
}

Policy bind_features(const Policy& policy, const FeatureTable& table) {
  const Matrix& probs = policy.table();
  if (probs.rows() != table.num_states()) throw DimensionMismatch("bind_features: policy rows != states");
  Matrix per_group(table.num_distinct(), probs.cols());
  for (int k = 0; k < table.num_distinct(); ++k) {
    const auto& g = table.group(k);
    per_group.row(k) = probs.row(g.front());
    for (const int s : g)
      if ((probs.row(s) - per_group.row(k)).cwiseAbs().maxCoeff() > 1e-12)
        throw ConfigError("bind_features: states sharing a feature vector have different action probabilities");
  }
  auto rule = [table, per_group](const Vector& phi) -> Vector {
    const auto k = table.find(phi);
    if (!k) throw UnsupportedFeature("policy: feature vector not in table");
    return per_group.row(*k).transpose();
  };
  return Policy::from_table_and_rule(probs, std::move(rule));
}

MomentDiagnostics feature_moment_checks(const FeatureDistribution& dist, const Policy* behavior, double tol) {
  MomentDiagnostics out;
  const int m = dist.dim();
  Matrix c = Matrix::Zero(m, m);
  std::vector<Matrix> per_action;
  if (behavior) per_action.assign(static_cast<std::size_t>(behavior->num_actions()), Matrix::Zero(m, m));
  for (int k = 0; k < dist.size(); ++k) {
    const Vector& phi = dist.support[static_cast<std::size_t>(k)];
    const double w = dist.weights[static_cast<std::size_t>(k)];
    const Matrix outer = phi * phi.transpose();
    c += w * outer;
    if (behavior) {
      const Vector b = behavior->feature_probs(phi);
      for (int a = 0; a < behavior->num_actions(); ++a) per_action[static_cast<std::size_t>(a)] += w * b(a) * outer;
    }
  }
  out.second_moment_min_sv = min_singular_value(c);
  out.second_moment_ok = out.second_moment_min_sv > tol;
  if (!out.second_moment_ok)
    out.messages.push_back("search-control second moment E[phi phi^T] is singular (min singular value " +
                           std::to_string(out.second_moment_min_sv) + ")");
  for (std::size_t a = 0; a < per_action.size(); ++a) {
    const double sv = min_singular_value(per_action[a]);
    out.per_action_min_sv.push_back(sv);
    if (sv <= tol) {
      out.per_action_ok = false;
      out.messages.push_back("per-action moment for action " + std::to_string(a) + " is singular");
    }
  }
  return out;
}

}  // namespace gdyna
