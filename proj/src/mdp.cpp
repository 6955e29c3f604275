#include "gdyna/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

namespace gdyna {

TabularMDP::TabularMDP(std::vector<Matrix> transition, std::vector<Matrix> reward, std::vector<bool> terminal,
                       double gamma, Vector restart)
    : transition_(std::move(transition)), reward_(std::move(reward)), terminal_(std::move(terminal)),
      gamma_(gamma), restart_(std::move(restart)) {
  if (transition_.empty()) throw ConfigError("mdp: at least one action required");
  if (reward_.size() != transition_.size()) throw DimensionMismatch("mdp: reward blocks != actions");
  const Eigen::Index n = transition_.front().rows();
  if (n <= 0) throw ConfigError("mdp: at least one state required");
  if (static_cast<Eigen::Index>(terminal_.size()) != n) throw DimensionMismatch("mdp: terminal mask size");
  if (!(gamma_ >= 0.0 && gamma_ < 1.0)) throw ConfigError("mdp: gamma must lie in [0,1)");
  for (std::size_t a = 0; a < transition_.size(); ++a) {
    const Matrix& p = transition_[a];
    if (p.rows() != n || p.cols() != n || reward_[a].rows() != n || reward_[a].cols() != n)
      throw DimensionMismatch("mdp: transition/reward blocks must be S x S");
    if (!reward_[a].allFinite()) throw ConfigError("mdp: non-finite reward");
    for (Eigen::Index s = 0; s < n; ++s) {
      check_distribution(p.row(s).transpose(), 1e-12, "mdp transition row");
      if (terminal_[static_cast<std::size_t>(s)]) {
        if (p(s, s) != 1.0 || reward_[a](s, s) != 0.0)
          throw ConfigError("mdp: terminal states must self-loop with zero reward");
      }
    }
  }
  if (has_terminals()) {
    if (restart_.size() == 0) {
      restart_ = Vector::Zero(n);
      int live = 0;
      for (Eigen::Index s = 0; s < n; ++s)
        if (!terminal_[static_cast<std::size_t>(s)]) ++live;
      if (live == 0) throw ConfigError("mdp: every state is terminal");
      for (Eigen::Index s = 0; s < n; ++s)
        if (!terminal_[static_cast<std::size_t>(s)]) restart_(s) = 1.0 / live;
    }
    if (restart_.size() != n) throw DimensionMismatch("mdp: restart distribution size");
    check_distribution(restart_, 1e-12, "mdp restart distribution");
  }
}

bool TabularMDP::has_terminals() const {
  return std::any_of(terminal_.begin(), terminal_.end(), [](bool t) { return t; });
}

Vector TabularMDP::chain_row(int s, int a) const {
  if (terminal(s)) return restart_;
  return transition(a).row(s).transpose();
}

double TabularMDP::chain_reward(int s, int a, int next) const {
  if (terminal(s)) return 0.0;
  return reward(a)(s, next);
}

Matrix TabularMDP::chain_kernel(const Policy& policy) const {
  const int n = num_states();
  Matrix k = Matrix::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    const Vector pa = policy.state_probs(s);
    for (int a = 0; a < num_actions(); ++a)
      if (pa(a) > 0.0) k.row(s) += pa(a) * chain_row(s, a).transpose();
  }
  return k;
}

Matrix TabularMDP::kernel(const Policy& policy) const {
  const int n = num_states();
  Matrix k = Matrix::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    const Vector pa = policy.state_probs(s);
    for (int a = 0; a < num_actions(); ++a)
      if (pa(a) > 0.0) k.row(s) += pa(a) * transition(a).row(s);
  }
  return k;
}

Vector TabularMDP::expected_reward(const Policy& policy) const {
  const int n = num_states();
  Vector r = Vector::Zero(n);
  for (int s = 0; s < n; ++s) {
    const Vector pa = policy.state_probs(s);
    for (int a = 0; a < num_actions(); ++a)
      if (pa(a) > 0.0) r(s) += pa(a) * transition(a).row(s).dot(reward(a).row(s));
  }
  return r;
}

// ---------------------------------------------------------------------------

void check_ergodic(const Matrix& kernel) {
  const int n = static_cast<int>(kernel.rows());
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (kernel(i, j) > 0.0) adj[static_cast<std::size_t>(i)].push_back(j);

  // Tarjan's strongly connected components.
  std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0),
      comp(static_cast<std::size_t>(n), -1);
  std::vector<bool> on_stack(static_cast<std::size_t>(n), false);
  std::vector<int> stack;
  int counter = 0, ncomp = 0;
  std::function<void(int)> connect = [&](int v) {
    const auto vs = static_cast<std::size_t>(v);
    index[vs] = low[vs] = counter++;
    stack.push_back(v);
    on_stack[vs] = true;
    for (const int w : adj[vs]) {
      const auto ws = static_cast<std::size_t>(w);
      if (index[ws] < 0) {
        connect(w);
        low[vs] = std::min(low[vs], low[ws]);
      } else if (on_stack[ws]) {
        low[vs] = std::min(low[vs], index[ws]);
      }
    }
    if (low[vs] == index[vs]) {
      int w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[static_cast<std::size_t>(w)] = false;
        comp[static_cast<std::size_t>(w)] = ncomp;
      } while (w != v);
      ++ncomp;
    }
  };
  for (int v = 0; v < n; ++v)
    if (index[static_cast<std::size_t>(v)] < 0) connect(v);

  std::vector<bool> closed(static_cast<std::size_t>(ncomp), true);
  for (int i = 0; i < n; ++i)
    for (const int j : adj[static_cast<std::size_t>(i)])
      if (comp[static_cast<std::size_t>(i)] != comp[static_cast<std::size_t>(j)])
        closed[static_cast<std::size_t>(comp[static_cast<std::size_t>(i)])] = false;
  const auto recurrent = std::count(closed.begin(), closed.end(), true);
  if (recurrent != 1)
    throw NonErgodicChain("chain has " + std::to_string(recurrent) + " recurrent classes");
  const int cls = static_cast<int>(std::find(closed.begin(), closed.end(), true) - closed.begin());

  // Period of the recurrent class: gcd of level differences along its edges.
  std::vector<int> level(static_cast<std::size_t>(n), -1);
  int root = 0;
  while (comp[static_cast<std::size_t>(root)] != cls) ++root;
  std::vector<int> queue{root};
  level[static_cast<std::size_t>(root)] = 0;
  int period = 0;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const int v = queue[q];
    for (const int w : adj[static_cast<std::size_t>(v)]) {
      if (comp[static_cast<std::size_t>(w)] != cls) continue;
      if (level[static_cast<std::size_t>(w)] < 0) {
        level[static_cast<std::size_t>(w)] = level[static_cast<std::size_t>(v)] + 1;
        queue.push_back(w);
      } else {
        period = std::gcd(period, std::abs(level[static_cast<std::size_t>(v)] + 1 - level[static_cast<std::size_t>(w)]));
      }
    }
  }
  if (period != 1) throw NonErgodicChain("recurrent class is periodic (period " + std::to_string(period) + ")");
}

StationaryDistribution stationary_distribution(const TabularMDP& mdp, const Policy& behavior,
                                               const FeatureTable* features) {
  const Matrix k = mdp.chain_kernel(behavior);
  check_ergodic(k);
  const Eigen::Index n = k.rows();
  const Matrix kt = k.transpose();
  StationaryDistribution out;
  Vector eta = Vector::Constant(n, 1.0 / static_cast<double>(n));
  constexpr long kMaxIterations = 50'000'000;
  for (out.iterations = 1; out.iterations <= kMaxIterations; ++out.iterations) {
    Vector next = kt * eta;
    next /= next.sum();
    const double change = (next - eta).cwiseAbs().maxCoeff();
    eta = std::move(next);
    if (change < 1e-12) break;
  }
  if (out.iterations > kMaxIterations) throw NonErgodicChain("power iteration did not converge");
  out.eta = eta;
  if (features) {
    if (features->num_states() != n) throw DimensionMismatch("stationary_distribution: feature table size");
    out.mu = FeatureDistribution::aggregate(*features, eta);
  }
  return out;
}

Vector exact_value(const TabularMDP& mdp, const Policy& target) {
  const Matrix p = mdp.kernel(target);
  const Vector r = mdp.expected_reward(target);
  const Matrix lhs = Matrix::Identity(p.rows(), p.cols()) - mdp.gamma() * p;
  const Vector v = checked_solve<SingularSystem>(lhs, r, "I - gamma P_pi").x;
  const double residual = (lhs * v - r).cwiseAbs().maxCoeff();
  if (!(residual < 1e-10)) throw SingularSystem("exact_value: Bellman residual " + std::to_string(residual));
  return v;
}

// ---------------------------------------------------------------------------

TabularSimulator::TabularSimulator(TabularMDP mdp, FeatureTable features, Policy behavior, std::uint64_t seed)
    : mdp_(std::move(mdp)), features_(std::move(features)), behavior_(std::move(behavior)), rng_(seed) {
  if (features_.num_states() != mdp_.num_states()) throw DimensionMismatch("simulator: feature table size");
  if (mdp_.has_terminals()) {
    state_ = sample_discrete(mdp_.restart(), rng_);
  } else {
    state_ = static_cast<int>(rng_() % static_cast<std::uint64_t>(mdp_.num_states()));
  }
}

Transition TabularSimulator::step() {
  Transition t;
  t.state = state_;
  t.action = behavior_.sample_state(state_, rng_);
  t.next_state = sample_discrete(mdp_.chain_row(state_, t.action), rng_);
  t.reward = mdp_.chain_reward(state_, t.action, t.next_state);
  t.phi = features_.state(t.state);
  t.phi_next = features_.state(t.next_state);
  state_ = t.next_state;
  return t;
}

std::vector<Transition> simulate(const TabularMDP& mdp, const FeatureTable& features, const Policy& behavior,
                                 long steps, std::uint64_t seed) {
  if (steps < 1) throw ConfigError("simulate: steps must be >= 1");
  TabularSimulator sim(mdp, features, behavior, seed);
  std::vector<Transition> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (long i = 0; i < steps; ++i) out.push_back(sim.step());
  return out;
}

}  // namespace gdyna
