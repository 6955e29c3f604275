#include "gdyna/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "json.hpp"

#include "gdyna/kernels.hpp"

namespace gdyna {

namespace {

void check_action(int action, int num_actions) {
  if (action < 0 || action >= num_actions) throw IndexOutOfRange("model: action out of range");
}

void check_dim(const Vector& phi, int m) {
  if (phi.size() != m) throw DimensionMismatch("model: feature dimension mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear

LinearExpectationModel::LinearExpectationModel(int feature_dim, int num_actions) {
  if (feature_dim <= 0 || num_actions <= 0) throw ConfigError("linear model: empty dimensions");
  f_.assign(static_cast<std::size_t>(num_actions), Matrix::Zero(feature_dim, feature_dim));
  b_.assign(static_cast<std::size_t>(num_actions), Vector::Zero(feature_dim));
}

LinearExpectationModel::LinearExpectationModel(std::vector<Matrix> f, std::vector<Vector> b)
    : f_(std::move(f)), b_(std::move(b)) {
  if (f_.empty() || f_.size() != b_.size()) throw DimensionMismatch("linear model: F/b action count");
  const auto m = b_.front().size();
  for (std::size_t a = 0; a < f_.size(); ++a)
    if (f_[a].rows() != m || f_[a].cols() != m || b_[a].size() != m)
      throw DimensionMismatch("linear model: inconsistent shapes");
}

Prediction LinearExpectationModel::predict(const Vector& phi, int action) const {
  check_action(action, num_actions());
  check_dim(phi, feature_dim());
  Prediction p;
  kernels::matvec(f(action), phi, p.next_features);
  p.reward = b(action).dot(phi);
  return p;
}

std::unique_ptr<ExpectationModel> LinearExpectationModel::clone() const {
  return std::make_unique<LinearExpectationModel>(*this);
}

void LinearExpectationModel::sgd_update(const Transition& t, double step) {
  check_action(t.action, num_actions());
  check_dim(t.phi, feature_dim());
  check_dim(t.phi_next, feature_dim());
  Vector pred;
  kernels::matvec(f(t.action), t.phi, pred);
  const Vector err = pred - t.phi_next;
  const double reward_err = b(t.action).dot(t.phi) - t.reward;
  kernels::rank1_update(f(t.action), err, t.phi, -step);
  b(t.action) -= step * reward_err * t.phi;
}

// ---------------------------------------------------------------------------
// MLP

MLPExpectationModel::MLPExpectationModel(int feature_dim, int num_actions, int hidden)
    : feature_dim_(feature_dim), num_actions_(num_actions) {
  if (feature_dim <= 0 || num_actions <= 0 || hidden <= 0) throw ConfigError("mlp model: empty dimensions");
  w1_ = Matrix::Zero(hidden, feature_dim + num_actions);
  b1_ = Vector::Zero(hidden);
  w2_ = Matrix::Zero(feature_dim + 1, hidden);
  b2_ = Vector::Zero(feature_dim + 1);
}

std::unique_ptr<ExpectationModel> MLPExpectationModel::clone() const {
  return std::make_unique<MLPExpectationModel>(*this);
}

void MLPExpectationModel::init_xavier(std::uint64_t seed) {
  Rng rng(seed);
  auto fill = [&rng](Matrix& w) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
  };
  fill(w1_);
  fill(w2_);
  b1_.setZero();
  b2_.setZero();
}

Vector MLPExpectationModel::input(const Vector& phi, int action) const {
  check_action(action, num_actions_);
  check_dim(phi, feature_dim_);
  Vector in = Vector::Zero(feature_dim_ + num_actions_);
  in.head(feature_dim_) = phi;
  in(feature_dim_ + action) = 1.0;
  return in;
}

MLPExpectationModel::Activations MLPExpectationModel::forward(const Vector& phi, int action) const {
  Activations act;
  act.input = input(phi, action);
  kernels::matvec(w1_, act.input, act.hidden);
  act.hidden = (act.hidden + b1_).array().tanh().matrix();
  kernels::matvec(w2_, act.hidden, act.output);
  act.output += b2_;
  return act;
}

Prediction MLPExpectationModel::predict(const Vector& phi, int action) const {
  const Activations act = forward(phi, action);
  return {act.output.head(feature_dim_), act.output(feature_dim_)};
}

double MLPExpectationModel::loss(const Transition& t) const {
  check_dim(t.phi_next, feature_dim_);
  const Activations act = forward(t.phi, t.action);
  const double r = act.output(feature_dim_) - t.reward;
  return 0.5 * (act.output.head(feature_dim_) - t.phi_next).squaredNorm() + 0.5 * r * r;
}

int MLPExpectationModel::num_parameters() const {
  return static_cast<int>(w1_.size() + b1_.size() + w2_.size() + b2_.size());
}

Vector MLPExpectationModel::parameters() const {
  Vector theta(num_parameters());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w1_.rows(); ++i)
    for (Eigen::Index j = 0; j < w1_.cols(); ++j) theta(k++) = w1_(i, j);
  for (Eigen::Index i = 0; i < b1_.size(); ++i) theta(k++) = b1_(i);
  for (Eigen::Index i = 0; i < w2_.rows(); ++i)
    for (Eigen::Index j = 0; j < w2_.cols(); ++j) theta(k++) = w2_(i, j);
  for (Eigen::Index i = 0; i < b2_.size(); ++i) theta(k++) = b2_(i);
  return theta;
}

void MLPExpectationModel::set_parameters(const Vector& theta) {
  if (theta.size() != num_parameters()) throw DimensionMismatch("mlp: parameter vector size");
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w1_.rows(); ++i)
    for (Eigen::Index j = 0; j < w1_.cols(); ++j) w1_(i, j) = theta(k++);
  for (Eigen::Index i = 0; i < b1_.size(); ++i) b1_(i) = theta(k++);
  for (Eigen::Index i = 0; i < w2_.rows(); ++i)
    for (Eigen::Index j = 0; j < w2_.cols(); ++j) w2_(i, j) = theta(k++);
  for (Eigen::Index i = 0; i < b2_.size(); ++i) b2_(i) = theta(k++);
}

Vector MLPExpectationModel::gradient(const Transition& t) const {
  check_dim(t.phi_next, feature_dim_);
  const Activations act = forward(t.phi, t.action);
  Vector d_out = act.output;
  d_out.head(feature_dim_) -= t.phi_next;
  d_out(feature_dim_) -= t.reward;
  Vector d_hidden;
  kernels::matvec_transpose(w2_, d_out, d_hidden);
  d_hidden.array() *= 1.0 - act.hidden.array().square();

  MLPExpectationModel grad(*this);
  grad.w1_ = d_hidden * act.input.transpose();
  grad.b1_ = d_hidden;
  grad.w2_ = d_out * act.hidden.transpose();
  grad.b2_ = d_out;
  return grad.parameters();
}

void MLPExpectationModel::sgd_update(const Transition& t, double step) {
  check_dim(t.phi_next, feature_dim_);
  const Activations act = forward(t.phi, t.action);
  Vector d_out = act.output;
  d_out.head(feature_dim_) -= t.phi_next;
  d_out(feature_dim_) -= t.reward;
  Vector d_hidden;
  kernels::matvec_transpose(w2_, d_out, d_hidden);
  d_hidden.array() *= 1.0 - act.hidden.array().square();

  kernels::rank1_update(w2_, d_out, act.hidden, -step);
  b2_ -= step * d_out;
  kernels::rank1_update(w1_, d_hidden, act.input, -step);
  b1_ -= step * d_hidden;
}

// ---------------------------------------------------------------------------
// Table model

TableExpectationModel::TableExpectationModel(std::vector<Vector> support, std::vector<std::vector<Vector>> next,
                                             std::vector<std::vector<double>> reward, std::vector<bool> supported)
    : support_(std::move(support)), next_(std::move(next)), reward_(std::move(reward)),
      supported_(std::move(supported)) {
  if (support_.empty() || next_.size() != support_.size() || reward_.size() != support_.size() ||
      supported_.size() != support_.size())
    throw DimensionMismatch("table model: inconsistent sizes");
  for (std::size_t k = 0; k < support_.size(); ++k) {
    if (!index_.try_emplace(support_[k], static_cast<int>(k)).second)
      throw ConfigError("table model: duplicate feature vector");
    if (next_[k].size() != next_.front().size() || reward_[k].size() != next_.front().size())
      throw DimensionMismatch("table model: action count");
  }
}

Prediction TableExpectationModel::predict(const Vector& phi, int action) const {
  check_action(action, num_actions());
  check_dim(phi, feature_dim());
  const auto it = index_.find(phi);
  if (it == index_.end()) throw UnsupportedFeature("table model: unknown feature vector");
  const auto k = static_cast<std::size_t>(it->second);
  if (!supported_[k]) throw UnsupportedFeature("table model: feature vector has zero stationary mass");
  return {next_[k][static_cast<std::size_t>(action)], reward_[k][static_cast<std::size_t>(action)]};
}

std::unique_ptr<ExpectationModel> TableExpectationModel::clone() const {
  return std::make_unique<TableExpectationModel>(*this);
}

// ---------------------------------------------------------------------------
// Distribution model

DistributionModel::DistributionModel(std::vector<Vector> support, int num_actions,
                                     std::vector<std::vector<std::vector<Outcome>>> outcomes)
    : support_(std::move(support)), num_actions_(num_actions), outcomes_(std::move(outcomes)) {
  if (outcomes_.size() != support_.size()) throw DimensionMismatch("distribution model: support size");
  for (const auto& per_action : outcomes_) {
    if (static_cast<int>(per_action.size()) != num_actions_) throw DimensionMismatch("distribution model: actions");
    for (const auto& row : per_action) {
      double total = 0.0;
      for (const auto& o : row) {
        if (o.next < 0 || o.next >= static_cast<int>(support_.size()))
          throw IndexOutOfRange("distribution model: outcome index");
        if (!(o.prob >= 0.0 && o.prob <= 1.0)) throw InvalidProbability("distribution model: probability");
        total += o.prob;
      }
      if (!row.empty() && std::abs(total - 1.0) > 1e-12)
        throw InvalidProbability("distribution model: row does not sum to 1");
    }
  }
}

DistributionModel DistributionModel::from_mdp(const TabularMDP& mdp, const Policy& behavior,
                                              const FeatureTable& features) {
  const auto sd = stationary_distribution(mdp, behavior, &features);
  const int groups = features.num_distinct();
  std::vector<Vector> support;
  std::vector<std::vector<std::vector<Outcome>>> outcomes(static_cast<std::size_t>(groups));
  for (int k = 0; k < groups; ++k) {
    support.push_back(features.distinct(k));
    const double mu = sd.mu.weights[static_cast<std::size_t>(k)];
    auto& per_action = outcomes[static_cast<std::size_t>(k)];
    per_action.resize(static_cast<std::size_t>(mdp.num_actions()));
    if (mu <= 0.0) continue;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      std::map<std::pair<int, double>, double> merged;
      for (const int s : features.group(k)) {
        const Vector row = mdp.chain_row(s, a);
        for (int next = 0; next < mdp.num_states(); ++next)
          if (row(next) > 0.0)
            merged[{features.group_of(next), mdp.chain_reward(s, a, next)}] += sd.eta(s) / mu * row(next);
      }
      double total = 0.0;
      for (const auto& [key, p] : merged) total += p;
      for (const auto& [key, p] : merged)
        per_action[static_cast<std::size_t>(a)].push_back({key.first, key.second, p / total});
    }
  }
  return DistributionModel(std::move(support), mdp.num_actions(), std::move(outcomes));
}

TableExpectationModel expectation_of(const DistributionModel& dist) {
  std::vector<Vector> support;
  std::vector<std::vector<Vector>> next(static_cast<std::size_t>(dist.size()));
  std::vector<std::vector<double>> reward(static_cast<std::size_t>(dist.size()));
  std::vector<bool> supported(static_cast<std::size_t>(dist.size()), true);
  for (int k = 0; k < dist.size(); ++k) {
    support.push_back(dist.support(k));
    const auto ks = static_cast<std::size_t>(k);
    for (int a = 0; a < dist.num_actions(); ++a) {
      Vector x = Vector::Zero(dist.support(k).size());
      double r = 0.0;
      const auto& row = dist.outcomes(k, a);
      if (row.empty()) supported[ks] = false;
      for (const auto& o : row) {
        x += o.prob * dist.support(o.next);
        r += o.prob * o.reward;
      }
      next[ks].push_back(x);
      reward[ks].push_back(r);
    }
  }
  return TableExpectationModel(std::move(support), std::move(next), std::move(reward), std::move(supported));
}

double distribution_backup(const DistributionModel& dist, int k, const Vector& pi_probs, const Vector& w,
                           double gamma) {
  double total = 0.0;
  for (int a = 0; a < dist.num_actions(); ++a) {
    if (pi_probs(a) == 0.0) continue;
    double inner = 0.0;
    for (const auto& o : dist.outcomes(k, a)) inner += o.prob * (o.reward + gamma * dist.support(o.next).dot(w));
    total += pi_probs(a) * inner;
  }
  return total;
}

double expectation_backup(const ExpectationModel& model, const Vector& phi, const Vector& pi_probs,
                          const Vector& w, double gamma) {
  double total = 0.0;
  for (int a = 0; a < model.num_actions(); ++a) {
    if (pi_probs(a) == 0.0) continue;
    const Prediction p = model.predict(phi, a);
    total += pi_probs(a) * (p.reward + gamma * p.next_features.dot(w));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Best models

LinearExpectationModel best_linear(const TabularMDP& mdp, const Policy& behavior, const FeatureTable& features) {
  const auto sd = stationary_distribution(mdp, behavior, &features);
  const int m = features.dim();
  std::vector<Matrix> f;
  std::vector<Vector> b;
  for (int a = 0; a < mdp.num_actions(); ++a) {
    Matrix moment = Matrix::Zero(m, m), cross = Matrix::Zero(m, m);
    Vector reward = Vector::Zero(m);
    for (int s = 0; s < mdp.num_states(); ++s) {
      const double w = sd.eta(s) * behavior.state_probs(s)(a);
      if (w == 0.0) continue;
      const Vector x = features.state(s);
      const Vector row = mdp.chain_row(s, a);
      Vector next_mean = Vector::Zero(m);
      double r = 0.0;
      for (int next = 0; next < mdp.num_states(); ++next) {
        if (row(next) == 0.0) continue;
        next_mean += row(next) * features.state(next);
        r += row(next) * mdp.chain_reward(s, a, next);
      }
      moment += w * x * x.transpose();
      cross += w * next_mean * x.transpose();
      reward += w * r * x;
    }
    const Matrix inv = checked_inverse<SingularMoment>(moment, "E_b[1(A=a) x x^T]");
    f.push_back(cross * inv);
    b.push_back(inv * reward);
  }
  return LinearExpectationModel(std::move(f), std::move(b));
}

TableExpectationModel best_nonlinear(const TabularMDP& mdp, const Policy& behavior, const FeatureTable& features) {
  const auto sd = stationary_distribution(mdp, behavior, &features);
  const int groups = features.num_distinct();
  const int m = features.dim();
  std::vector<Vector> support;
  std::vector<std::vector<Vector>> next(static_cast<std::size_t>(groups));
  std::vector<std::vector<double>> reward(static_cast<std::size_t>(groups));
  std::vector<bool> supported(static_cast<std::size_t>(groups));
  for (int k = 0; k < groups; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    support.push_back(features.distinct(k));
    const double mu = sd.mu.weights[ks];
    supported[ks] = mu > 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      Vector x = Vector::Zero(m);
      double r = 0.0;
      if (mu > 0.0) {
        for (const int s : features.group(k)) {
          const Vector row = mdp.chain_row(s, a);
          for (int n = 0; n < mdp.num_states(); ++n) {
            if (row(n) == 0.0) continue;
            x += sd.eta(s) * row(n) * features.state(n);
            r += sd.eta(s) * row(n) * mdp.chain_reward(s, a, n);
          }
        }
        x /= mu;
        r /= mu;
      }
      next[ks].push_back(x);
      reward[ks].push_back(r);
    }
  }
  return TableExpectationModel(std::move(support), std::move(next), std::move(reward), std::move(supported));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'G', 'D', 'Y', 'N', 'A', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;
enum class ModelKind : std::uint32_t { kLinear = 1, kMlp = 2 };

struct Header {
  ModelKind kind;
  std::uint32_t m, actions, hidden;
};

Header header_of(const ExpectationModel& model) {
  if (dynamic_cast<const LinearExpectationModel*>(&model))
    return {ModelKind::kLinear, static_cast<std::uint32_t>(model.feature_dim()),
            static_cast<std::uint32_t>(model.num_actions()), 0};
  if (const auto* mlp = dynamic_cast<const MLPExpectationModel*>(&model))
    return {ModelKind::kMlp, static_cast<std::uint32_t>(model.feature_dim()),
            static_cast<std::uint32_t>(model.num_actions()), static_cast<std::uint32_t>(mlp->hidden())};
  throw ConfigError("checkpoint: only linear and mlp models are serializable");
}

Vector weights_of(const ExpectationModel& model) {
  if (const auto* mlp = dynamic_cast<const MLPExpectationModel*>(&model)) return mlp->parameters();
  const auto& lin = dynamic_cast<const LinearExpectationModel&>(model);
  const Eigen::Index m = lin.feature_dim();
  Vector out(lin.num_actions() * (m * m + m));
  Eigen::Index k = 0;
  for (int a = 0; a < lin.num_actions(); ++a)
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) out(k++) = lin.f(a)(i, j);
  for (int a = 0; a < lin.num_actions(); ++a)
    for (Eigen::Index i = 0; i < m; ++i) out(k++) = lin.b(a)(i);
  return out;
}

std::unique_ptr<LearnableModel> build(const Header& h, const Vector& weights) {
  const int m = static_cast<int>(h.m), actions = static_cast<int>(h.actions);
  if (h.kind == ModelKind::kMlp) {
    auto mlp = std::make_unique<MLPExpectationModel>(m, actions, static_cast<int>(h.hidden));
    mlp->set_parameters(weights);
    return mlp;
  }
  if (h.kind != ModelKind::kLinear) throw ConfigError("checkpoint: unknown model kind");
  auto lin = std::make_unique<LinearExpectationModel>(m, actions);
  if (weights.size() != static_cast<Eigen::Index>(actions) * (m * m + m))
    throw DimensionMismatch("checkpoint: weight count");
  Eigen::Index k = 0;
  for (int a = 0; a < actions; ++a)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) lin->f(a)(i, j) = weights(k++);
  for (int a = 0; a < actions; ++a)
    for (int i = 0; i < m; ++i) lin->b(a)(i) = weights(k++);
  return lin;
}

template <class T>
void put(std::ostream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <class T>
T get(std::istream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T))) throw ConfigError("checkpoint: truncated input");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_model(const ExpectationModel& model, std::ostream& out) {
  const Header h = header_of(model);
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<std::uint32_t>(h.kind));
  put(out, h.m);
  put(out, h.actions);
  put(out, h.hidden);
  const Vector w = weights_of(model);
  for (Eigen::Index i = 0; i < w.size(); ++i) put(out, w(i));
}

std::unique_ptr<LearnableModel> load_model(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ConfigError("checkpoint: bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw ConfigError("checkpoint: unsupported version");
  Header h{static_cast<ModelKind>(get<std::uint32_t>(in)), 0, 0, 0};
  h.m = get<std::uint32_t>(in);
  h.actions = get<std::uint32_t>(in);
  h.hidden = get<std::uint32_t>(in);
  const long count = h.kind == ModelKind::kMlp
                         ? static_cast<long>(h.hidden) * (h.m + h.actions) + h.hidden + (h.m + 1L) * h.hidden + h.m + 1
                         : static_cast<long>(h.actions) * (static_cast<long>(h.m) * h.m + h.m);
  Vector w(count);
  for (long i = 0; i < count; ++i) w(i) = get<double>(in);
  return build(h, w);
}

std::string model_to_json(const ExpectationModel& model) {
  const Header h = header_of(model);
  const Vector w = weights_of(model);
  nlohmann::json j;
  j["kind"] = h.kind == ModelKind::kMlp ? "mlp" : "linear";
  j["m"] = h.m;
  j["actions"] = h.actions;
  j["hidden"] = h.hidden;
  j["weights"] = std::vector<double>(w.data(), w.data() + w.size());
  return j.dump();
}

std::unique_ptr<LearnableModel> model_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const std::string kind = j.at("kind");
    if (kind != "mlp" && kind != "linear") throw ConfigError("checkpoint: unknown model kind " + kind);
    Header h{kind == "mlp" ? ModelKind::kMlp : ModelKind::kLinear, j.at("m"), j.at("actions"), j.at("hidden")};
    const auto weights = j.at("weights").get<std::vector<double>>();
    return build(h, Eigen::Map<const Vector>(weights.data(), static_cast<Eigen::Index>(weights.size())));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
}

}  // namespace gdyna
