#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gdyna/analysis.hpp"
#include "gdyna/environments.hpp"
#include "gdyna/models.hpp"
#include "gdyna/planners.hpp"

namespace gdyna::harness {

struct LstdReferenceSpec {
  long steps = 2000000;
  std::uint64_t seed = 7;
  std::string file;  // cache path; empty disables caching
};

/// Parsed experiment configuration. `source` holds the normalised JSON
/// (every default filled in) and is what the config hash is taken over.
struct ExperimentConfig {
  nlohmann::json source;

  std::string environment;
  nlohmann::json environment_params;
  std::string features;  // default | one_hot | baird | tile
  int tilings = 0;
  int tiles = 0;

  std::string model;  // linear | mlp | best_oracle
  int hidden = 200;
  StepSchedule model_step = StepSchedule::constant(0.05);

  std::string algorithm;  // td0 | gradient_dyna
  StepSchedule alpha;
  StepSchedule beta;
  std::optional<std::vector<double>> w0;  // empty = environment default

  SearchControl::Mode search_mode = SearchControl::Mode::kLastSeen;
  std::size_t search_capacity = 1;

  long steps = 0;
  int planning_steps = 1;
  std::vector<std::string> metrics;
  std::vector<std::uint64_t> seeds;
  long log_stride = 100;
  double divergence_threshold = 1e6;
  LstdReferenceSpec lstd_reference;
  bool save_models = false;
};

/// Throws ConfigError naming the offending field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// 16 hex digits of FNV-1a over the canonical dump of `source`.
std::string config_hash(const ExperimentConfig& config);

/// Everything a run needs from the environment, independent of its kind.
struct Setup {
  std::string name;
  std::optional<TabularProblem> tabular;
  std::optional<MountainCarProblem> car;
  Policy behavior;
  Policy target;
  int dim = 0;
  int num_actions = 0;
  double gamma = 0.0;
  Vector default_w0;
  std::optional<Vector> true_values;  // tabular only
  std::optional<FeatureDistribution> mu;  // tabular only

  std::unique_ptr<Environment> make_environment(std::uint64_t seed) const;
};

Setup build_setup(const ExperimentConfig& config);

/// Off-policy LSTD statistics from a long behaviour rollout.
struct LstdReference {
  Matrix a;
  Vector c;
  Vector w;
  long steps = 0;
  std::uint64_t seed = 0;
  int rank = 0;
  double condition = 0.0;
};

LstdReference reference_lstd(const Setup& setup, long steps, std::uint64_t seed);
void save_reference(const LstdReference& ref, const std::string& path);
LstdReference load_reference(const std::string& path);

struct RunRecord {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> metrics;
  std::vector<long> steps;
  std::vector<std::vector<double>> rows;
  bool diverged = false;
  long diverged_at = -1;
  double wall_seconds = 0.0;
  std::unique_ptr<ExpectationModel> final_model;
  Vector final_w;
};

/// One seed, fully deterministic given (config, seed). `reference` is
/// required when the lstd_loss metric is requested.
RunRecord run_seed(const ExperimentConfig& config, const Setup& setup, std::uint64_t seed,
                   const LstdReference* reference);

/// All seeds of `config`, in parallel. Resolves the LSTD reference first.
std::vector<RunRecord> run(const ExperimentConfig& config);

struct Curves {
  std::vector<std::string> metrics;
  std::vector<long> steps;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> std;  // population standard deviation
};

/// Pointwise mean and std. Throws MisalignedRecords unless every record has
/// the same steps and metrics; with `common_prefix` the longest shared
/// prefix of rows is used instead.
Curves aggregate(const std::vector<RunRecord>& records, bool common_prefix = false);

std::string record_csv(const RunRecord& record);
std::string curves_csv(const Curves& curves);

/// Writes seed_<seed>.csv, aggregate.csv and manifest.json into `dir`.
/// Throws OutputConflict when `dir` holds a manifest with another config
/// hash and `force` is false.
void write_outputs(const std::string& dir, const ExperimentConfig& config, const std::vector<RunRecord>& records,
                   bool force);

class OutputConflict : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct SweepRow {
  nlohmann::json assignment;  // field path -> value
  double score = 0.0;         // +inf when any seed diverged
  int diverged = 0;
};

struct SweepResult {
  std::vector<SweepRow> table;
  std::size_t best = 0;
  ExperimentConfig best_config;
};

/// Mean of `metric` over the latter half of each run, averaged over seeds.
/// Divergent runs score +inf.
double latter_half_score(const std::vector<RunRecord>& records, const std::string& metric);

/// `grid` maps dotted field paths (e.g. "planner.alpha.a0") to value lists;
/// the cartesian product is run and scored with the first configured metric.
SweepResult sweep(const ExperimentConfig& base, const nlohmann::json& grid);

}  // namespace gdyna::harness
