#include "gdyna/environments.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

namespace gdyna {

namespace {

std::vector<std::string> assumption4_warnings(const TabularProblem& p) {
  std::vector<std::string> out;
  try {
    const auto sd = stationary_distribution(p.mdp, p.behavior, &p.features);
    const auto diag = feature_moment_checks(sd.mu, &p.behavior);
    if (!diag.per_action_ok) out.push_back("per-action feature moment is singular (model learning assumption fails)");
  } catch (const NonErgodicChain& e) {
    out.push_back(std::string("behaviour chain is not ergodic: ") + e.what());
  }
  return out;
}

}  // namespace

TabularProblem make_two_state(const TwoStateParams& params) {
  for (const auto& row : params.move)
    for (const double p : row)
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidProbability("two_state: move probability outside [0,1]");
  std::vector<Matrix> p(2, Matrix::Zero(2, 2)), r(2, Matrix::Zero(2, 2));
  for (int a = 0; a < 2; ++a) {
    for (int s = 0; s < 2; ++s) {
      const double move = params.move[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
      p[static_cast<std::size_t>(a)](s, 1 - s) = move;
      p[static_cast<std::size_t>(a)](s, s) = 1.0 - move;
    }
  }
  r[1].row(0).setConstant(params.reward);
  Matrix phi(2, 1);
  phi << params.features[0], params.features[1];
  Matrix b(2, 2), pi(2, 2);
  b << params.behavior_s1[0], params.behavior_s1[1], params.behavior_s2[0], params.behavior_s2[1];
  pi << params.target_s1[0], params.target_s1[1], params.target_s2[0], params.target_s2[1];

  FeatureTable table(phi);
  TabularProblem out{"two_state",
                     TabularMDP(std::move(p), std::move(r), {false, false}, params.gamma),
                     table,
                     bind_features(Policy::from_table(b), table),
                     bind_features(Policy::from_table(pi), table),
                     Vector::Zero(1),
                     {}};
  out.warnings = assumption4_warnings(out);
  return out;
}

TabularProblem make_baird(double gamma) {
  constexpr int n = 7;
  std::vector<Matrix> p(2, Matrix::Zero(n, n)), r(2, Matrix::Zero(n, n));
  for (int s = 0; s < n; ++s) {
    for (int j = 0; j < 6; ++j) p[0](s, j) = 1.0 / 6.0;
    p[1](s, 6) = 1.0;
  }
  Matrix b(n, 2), pi(n, 2);
  for (int s = 0; s < n; ++s) {
    b.row(s) << 6.0 / 7.0, 1.0 / 7.0;
    pi.row(s) << 0.0, 1.0;
  }
  FeatureTable table(baird_feature_matrix());
  Vector w0 = Vector::Ones(8);
  w0(6) = 10.0;
  return TabularProblem{"baird",
                        TabularMDP(std::move(p), std::move(r), std::vector<bool>(n, false), gamma),
                        table,
                        bind_features(Policy::from_table(b), table),
                        bind_features(Policy::from_table(pi), table),
                        w0,
                        {}};
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& four_rooms_layout() {
  static const std::vector<std::string> layout = {
      ".....#.....",  //
      ".....#.....",  //
      "...........",  //
      ".....#.....",  //
      ".....#.....",  //
      "#.####.....",  //
      ".....###.##",  //
      ".....#.....",  //
      ".....#.....",  //
      "...........",  //
      ".....#.....",  //
  };
  return layout;
}

FourRoomsProblem make_four_rooms(const FourRoomsParams& params) {
  if (!(params.sticky >= 0.0 && params.sticky <= 1.0)) throw InvalidProbability("four_rooms: sticky outside [0,1]");
  const auto& layout = four_rooms_layout();
  const int rows = static_cast<int>(layout.size());
  const int cols = static_cast<int>(layout.front().size());
  std::map<std::pair<int, int>, int> id;
  std::vector<std::array<int, 2>> cells;
  std::optional<TileCoder> coder;
  std::vector<int> shortest_path_action;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      if (layout[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == '.') {
        id[{i, j}] = static_cast<int>(cells.size());
        cells.push_back({i, j});
      }
  const int n = static_cast<int>(cells.size());
  constexpr int kActions = 4;
  constexpr int dr[kActions] = {-1, 1, 0, 0};
  constexpr int dc[kActions] = {0, 0, -1, 1};
  auto move = [&](int s, int a) {
    const auto [i, j] = cells[static_cast<std::size_t>(s)];
    const auto it = id.find({i + dr[a], j + dc[a]});
    return it == id.end() ? s : it->second;
  };
  std::vector<bool> terminal(static_cast<std::size_t>(n), false);
  for (const auto& corner : {std::pair{0, 0}, std::pair{0, cols - 1}, std::pair{rows - 1, 0},
                             std::pair{rows - 1, cols - 1}})
    terminal[static_cast<std::size_t>(id.at(corner))] = true;

  std::vector<Matrix> p(kActions, Matrix::Zero(n, n)), r(kActions, Matrix::Zero(n, n));
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < kActions; ++a) {
      Matrix& pa = p[static_cast<std::size_t>(a)];
      if (terminal[static_cast<std::size_t>(s)]) {
        pa(s, s) = 1.0;
        continue;
      }
      pa(s, move(s, a)) += 1.0 - params.sticky;
      for (int other = 0; other < kActions; ++other) pa(s, move(s, other)) += params.sticky / kActions;
      for (int next = 0; next < n; ++next)
        if (terminal[static_cast<std::size_t>(next)]) r[static_cast<std::size_t>(a)](s, next) = 1.0;
    }
  }

  // Shortest path to the top-left terminal; ties go to the first action in (up, down, left, right).
  const int goal = id.at({0, 0});
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::deque<int> queue{goal};
  dist[static_cast<std::size_t>(goal)] = 0;
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    for (int a = 0; a < kActions; ++a) {
      const int next = move(s, a);
      if (dist[static_cast<std::size_t>(next)] >= 0 || terminal[static_cast<std::size_t>(next)]) continue;
      dist[static_cast<std::size_t>(next)] = dist[static_cast<std::size_t>(s)] + 1;
      queue.push_back(next);
    }
  }
  shortest_path_action.assign(static_cast<std::size_t>(n), 0);
  for (int s = 0; s < n; ++s) {
    if (terminal[static_cast<std::size_t>(s)]) continue;
    for (int a = 0; a < kActions; ++a) {
      const int next = move(s, a);
      if (dist[static_cast<std::size_t>(next)] == dist[static_cast<std::size_t>(s)] - 1) {
        shortest_path_action[static_cast<std::size_t>(s)] = a;
        break;
      }
    }
  }

  Matrix phi;
  if (params.features == FourRoomsFeatures::kTiles) {
    coder.emplace(params.num_tilings, std::vector<int>{params.tiles_per_dim, params.tiles_per_dim},
                      std::vector<double>{0.0, 0.0},
                      std::vector<double>{static_cast<double>(rows), static_cast<double>(cols)});
    phi.resize(n, coder->size());
    for (int s = 0; s < n; ++s) {
      Vector point(2);
      point << cells[static_cast<std::size_t>(s)][0] + 0.5, cells[static_cast<std::size_t>(s)][1] + 0.5;
      phi.row(s) = coder->encode(point).transpose();
    }
  } else {
    phi = Matrix::Identity(n, n);
  }
  FeatureTable table(phi);

  // pi must be a function of the feature vector: each group H_phi takes the
  // majority shortest-path action of its non-terminal states.
  Matrix pi = Matrix::Zero(n, kActions);
  for (int k = 0; k < table.num_distinct(); ++k) {
    std::array<int, kActions> votes{};
    for (const int s : table.group(k))
      if (!terminal[static_cast<std::size_t>(s)]) ++votes[static_cast<std::size_t>(shortest_path_action[static_cast<std::size_t>(s)])];
    const int a = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    for (const int s : table.group(k)) pi(s, a) = 1.0;
  }
  Matrix b = Matrix::Constant(n, kActions, 1.0 / kActions);

  TabularProblem problem{"four_rooms",
                               TabularMDP(std::move(p), std::move(r), terminal, params.gamma),
                               table,
                               bind_features(Policy::from_table(b), table),
                               bind_features(Policy::from_table(pi), table),
                               Vector::Zero(table.dim()),
                               {}};
  return FourRoomsProblem{std::move(problem), std::move(cells), std::move(coder), std::move(shortest_path_action)};
}

// ---------------------------------------------------------------------------

CarState mountain_car_dynamics(CarState s, int action) {
  double v = s.velocity + 0.001 * (action - 1) - 0.0025 * std::cos(3.0 * s.position);
  v = std::clamp(v, -kCarMaxSpeed, kCarMaxSpeed);
  double x = s.position + v;
  if (x < kCarMinPosition) {
    x = kCarMinPosition;
    v = 0.0;
  }
  x = std::min(x, kCarMaxPosition);
  return {x, v};
}

int energy_pumping_action(double velocity) {
  if (velocity > 0.0) return 2;
  if (velocity < 0.0) return 0;
  return 1;
}

TileCoder mountain_car_coder(const MountainCarParams& params) {
  return TileCoder(params.num_tilings, {params.tiles_per_dim, params.tiles_per_dim},
                   {kCarMinPosition, -kCarMaxSpeed}, {kCarMaxPosition, kCarMaxSpeed});
}

MountainCarProblem make_mountain_car(const MountainCarParams& params) {
  if (!(params.sticky >= 0.0 && params.sticky <= 1.0)) throw InvalidProbability("mountain_car: sticky outside [0,1]");
  if (!(params.behavior_randomness >= 0.0 && params.behavior_randomness <= 1.0))
    throw InvalidProbability("mountain_car: randomness outside [0,1]");
  TileCoder coder = mountain_car_coder(params);
  const double eps = params.behavior_randomness;
  auto behavior = [coder, eps](const Vector& phi) -> Vector {
    Vector p = Vector::Constant(3, eps / 3.0);
    p(energy_pumping_action(coder.decode(phi)(1))) += 1.0 - eps;
    return p;
  };
  auto target = [coder](const Vector& phi) -> Vector {
    Vector p = Vector::Zero(3);
    p(energy_pumping_action(coder.decode(phi)(1))) = 1.0;
    return p;
  };
  return MountainCarProblem{params, coder, Policy::from_rule(3, behavior), Policy::from_rule(3, target)};
}

MountainCar::MountainCar(const MountainCarParams& params, Policy behavior, std::uint64_t seed)
    : params_(params), coder_(mountain_car_coder(params)), behavior_(std::move(behavior)), rng_(seed) {
  restart();
}

Vector MountainCar::features(const CarState& s) const {
  Vector point(2);
  point << s.position, s.velocity;
  return coder_.encode(point);
}

void MountainCar::restart() {
  state_ = CarState{-0.6 + 0.2 * uniform01(rng_), 0.0};
  at_goal_ = false;
}

Transition MountainCar::step() {
  Transition t;
  t.phi = features(state_);
  t.action = behavior_.sample_feature(t.phi, rng_);
  if (at_goal_) {
    restart();
    t.reward = 0.0;
  } else {
    int executed = t.action;
    if (uniform01(rng_) < params_.sticky) executed = static_cast<int>(rng_() % 3);
    state_ = mountain_car_dynamics(state_, executed);
    t.reward = -1.0;
    at_goal_ = state_.position >= kCarMaxPosition;
  }
  t.phi_next = features(state_);
  return t;
}

}  // namespace gdyna
