#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gdyna/features.hpp"
#include "gdyna/mdp.hpp"

namespace gdyna {

/// A tabular evaluation problem: MDP, features, behaviour policy b and
/// target policy pi (both bound to feature vectors), and the default initial
/// value weights.
struct TabularProblem {
  std::string name;
  TabularMDP mdp;
  FeatureTable features;
  Policy behavior;
  Policy target;
  Vector initial_weights;
  std::vector<std::string> warnings;
};

/// Two states (s1, s2), two actions (blue = 0, red = 1). `move[s][a]` is the
/// probability that action a in state s moves to the other state.
struct TwoStateParams {
  std::array<std::array<double, 2>, 2> move{{{0.9, 0.3}, {0.2, 0.6}}};
  double reward = 1.0;  // paid whenever red is taken in s1
  double gamma = 0.9;
  std::array<double, 2> features{0.5, -0.1};
  std::array<double, 2> behavior_s1{0.1, 0.9};
  std::array<double, 2> behavior_s2{0.3, 0.7};
  std::array<double, 2> target_s1{0.4, 0.6};
  std::array<double, 2> target_s2{0.5, 0.5};
};

TabularProblem make_two_state(const TwoStateParams& params = {});

/// Baird's seven-state star: action 0 (dashed) jumps uniformly to one of the
/// six upper states, action 1 (solid) goes to the lower state. b takes dashed
/// with probability 6/7; pi always takes solid. Rewards are zero.
TabularProblem make_baird(double gamma = 0.99);

enum class FourRoomsFeatures { kTiles, kOneHot };

struct FourRoomsParams {
  double sticky = 0.3;  // probability that a uniformly random action replaces the chosen one
  double gamma = 0.99;
  FourRoomsFeatures features = FourRoomsFeatures::kTiles;
  int num_tilings = 4;
  int tiles_per_dim = 2;
};

/// 11 x 11 four-rooms grid with terminal corners. Actions: up, down, left,
/// right; blocked moves stay in place. Reward 1 on entering a terminal.
struct FourRoomsProblem {
  TabularProblem problem;
  std::vector<std::array<int, 2>> cells;  // (row, col) of each state
  std::optional<TileCoder> coder;
  std::vector<int> shortest_path_action;  // per state, before feature aggregation
};

FourRoomsProblem make_four_rooms(const FourRoomsParams& params = {});

/// Rows of the 11 x 11 layout; '#' marks a wall.
const std::vector<std::string>& four_rooms_layout();

// ---------------------------------------------------------------------------

struct MountainCarParams {
  double sticky = 0.3;
  double behavior_randomness = 0.5;
  double gamma = 0.99;
  int num_tilings = 8;
  int tiles_per_dim = 8;
};

inline constexpr double kCarMinPosition = -1.2;
inline constexpr double kCarMaxPosition = 0.5;
inline constexpr double kCarMaxSpeed = 0.07;

struct CarState {
  double position = -0.5;
  double velocity = 0.0;
};

/// Classic dynamics with actions {0: left, 1: coast, 2: right}.
CarState mountain_car_dynamics(CarState s, int action);

/// Energy pumping: thrust in the direction of the velocity (coast at zero).
int energy_pumping_action(double velocity);

/// Mountain Car with sticky actions. Reward -1 per step; reaching the goal
/// enters a terminal state whose next transition restarts the episode with
/// zero reward, position uniform in [-0.6, -0.4] and zero velocity.
class MountainCar final : public Environment {
 public:
  MountainCar(const MountainCarParams& params, Policy behavior, std::uint64_t seed);

  Transition step() override;
  int num_actions() const override { return 3; }
  int feature_dim() const override { return coder_.size(); }
  const CarState& state() const { return state_; }
  bool at_goal() const { return at_goal_; }
  const TileCoder& coder() const { return coder_; }

 private:
  Vector features(const CarState& s) const;
  void restart();

  MountainCarParams params_;
  TileCoder coder_;
  Policy behavior_;
  Rng rng_;
  CarState state_;
  bool at_goal_ = false;
};

TileCoder mountain_car_coder(const MountainCarParams& params);

struct MountainCarProblem {
  MountainCarParams params;
  TileCoder coder;
  Policy behavior;
  Policy target;
};

/// Policies act on tile features through the decoded velocity.
MountainCarProblem make_mountain_car(const MountainCarParams& params = {});

}  // namespace gdyna
