#include "gdyna/harness.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace gdyna::harness {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict JSON reading with field paths in every error.

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing required field");
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const json& v = at(key);
    return convert<T>(v, field(key));
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) {
      seen_.insert(key);
      return fallback;
    }
    return get<T>(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<long long>() < 0) throw ConfigError(path + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
    }
    return v.get<T>();
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<double> number_list(const json& v, const std::string& path, std::size_t size) {
  if (!v.is_array() || v.size() != size)
    throw ConfigError(path + ": expected an array of " + std::to_string(size) + " numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < size; ++i) out.push_back(Reader::convert<double>(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

void require(bool ok, const std::string& path, const std::string& message) {
  if (!ok) throw ConfigError(path + ": " + message);
}

StepSchedule parse_schedule(const json& v, const std::string& path) {
  StepSchedule s;
  if (v.is_number()) {
    s = StepSchedule::constant(v.get<double>());
  } else {
    Reader r(v, path);
    s.a0 = r.get<double>("a0");
    s.tau = r.get<double>("tau", 1.0);
    s.power = r.get<double>("power", 0.0);
    r.finish();
  }
  require(s.a0 > 0.0 && std::isfinite(s.a0), path + ".a0", "must be positive");
  require(s.tau > 0.0, path + ".tau", "must be positive");
  require(s.power >= 0.0, path + ".power", "must be non-negative");
  return s;
}

json schedule_json(const StepSchedule& s) { return {{"a0", s.a0}, {"tau", s.tau}, {"power", s.power}}; }

json parse_environment_params(const std::string& name, const json& params, const std::string& path) {
  Reader r(params, path);
  json out = json::object();
  auto probability = [&](const std::string& key, double fallback) {
    const double p = r.get<double>(key, fallback);
    require(p >= 0.0 && p <= 1.0, r.field(key), "must lie in [0, 1]");
    out[key] = p;
  };
  const double gamma = r.get<double>("gamma", name == "two_state" ? 0.9 : 0.99);
  require(gamma >= 0.0 && gamma < 1.0, r.field("gamma"), "must lie in [0, 1)");
  out["gamma"] = gamma;
  if (name == "two_state") {
    const TwoStateParams d;
    auto pair_rows = [&](const std::string& key, std::array<double, 2> r0, std::array<double, 2> r1) {
      json rows = {{r0[0], r0[1]}, {r1[0], r1[1]}};
      if (r.has(key)) {
        const json& v = r.at(key);
        require(v.is_array() && v.size() == 2, r.field(key), "expected a 2 x 2 array");
        for (std::size_t i = 0; i < 2; ++i) {
          const auto row = number_list(v[i], r.field(key) + "[" + std::to_string(i) + "]", 2);
          rows[i] = row;
        }
      } else {
        r.get<double>(key, 0.0);
      }
      out[key] = rows;
    };
    pair_rows("move", d.move[0], d.move[1]);
    pair_rows("behavior", d.behavior_s1, d.behavior_s2);
    pair_rows("target", d.target_s1, d.target_s2);
    out["reward"] = r.get<double>("reward", d.reward);
    if (r.has("features")) {
      out["features"] = number_list(r.at("features"), r.field("features"), 2);
    } else {
      r.get<double>("features", 0.0);
      out["features"] = {d.features[0], d.features[1]};
    }
  } else if (name == "baird") {
  } else if (name == "four_rooms") {
    probability("sticky", 0.3);
  } else if (name == "mountain_car") {
    probability("sticky", 0.3);
    probability("behavior_randomness", 0.5);
  } else {
    throw ConfigError("environment.name: unknown environment '" + name +
                      "' (expected two_state, baird, four_rooms or mountain_car)");
  }
  r.finish();
  return out;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

bool needs_tabular(const std::string& metric) { return metric == "rmse" || metric == "mb_mspbe"; }

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  Reader root(j, "");

  {
    Reader r(root.at("environment"), "environment");
    c.environment = r.get<std::string>("name");
    const json params = r.has("params") ? r.at("params") : json::object();
    c.environment_params = parse_environment_params(c.environment, params, "environment.params");
    r.finish();
  }

  {
    const json& f = root.has("features") ? root.at("features") : json("default");
    json spec = f.is_string() ? json{{"name", f.get<std::string>()}} : f;
    Reader r(spec, "features");
    c.features = r.get<std::string>("name");
    if (c.features == "default")
      c.features = c.environment == "baird"       ? "baird"
                   : c.environment == "two_state" ? "scalar"
                                                  : "tile";
    const bool tiles = c.environment == "four_rooms" || c.environment == "mountain_car";
    if (c.features == "tile") {
      require(tiles, "features.name", "tile coding is available for four_rooms and mountain_car");
      const int dt = c.environment == "four_rooms" ? 4 : 8;
      const int dn = c.environment == "four_rooms" ? 2 : 8;
      c.tilings = r.get<int>("tilings", dt);
      c.tiles = r.get<int>("tiles", dn);
      require(c.tilings > 0, "features.tilings", "must be positive");
      require(c.tiles > 0, "features.tiles", "must be positive");
    } else if (c.features == "one_hot") {
      require(c.environment != "mountain_car", "features.name", "one_hot needs a finite state space");
    } else if (c.features == "baird") {
      require(c.environment == "baird", "features.name", "baird features belong to the baird environment");
    } else if (c.features == "scalar") {
      require(c.environment == "two_state", "features.name", "scalar features belong to the two_state environment");
    } else {
      throw ConfigError("features.name: unknown feature map '" + c.features + "'");
    }
    r.finish();
  }

  {
    Reader r(root.at("model"), "model");
    c.model = r.get<std::string>("kind");
    require(c.model == "linear" || c.model == "mlp" || c.model == "best_oracle", "model.kind",
            "expected linear, mlp or best_oracle");
    require(!(c.model == "best_oracle" && c.environment == "mountain_car"), "model.kind",
            "best_oracle needs a tabular environment");
    c.hidden = r.get<int>("hidden", 200);
    if (r.has("step")) c.model_step = parse_schedule(r.at("step"), "model.step");
    else r.get<double>("step", 0.0);
    require(c.hidden > 0, "model.hidden", "must be positive");
    r.finish();
  }

  {
    Reader r(root.at("planner"), "planner");
    c.algorithm = r.get<std::string>("algorithm");
    require(c.algorithm == "td0" || c.algorithm == "gradient_dyna", "planner.algorithm",
            "expected td0 or gradient_dyna");
    c.alpha = parse_schedule(r.at("alpha"), "planner.alpha");
    if (c.algorithm == "gradient_dyna") c.beta = parse_schedule(r.at("beta"), "planner.beta");
    else if (r.has("beta")) c.beta = parse_schedule(r.at("beta"), "planner.beta");
    if (r.has("w0")) {
      const json& w = r.at("w0");
      if (w.is_string()) {
        const auto s = w.get<std::string>();
        require(s == "default" || s == "zero", "planner.w0", "expected \"default\", \"zero\" or an array");
        if (s == "zero") c.w0 = std::vector<double>{};
      } else {
        require(w.is_array() && !w.empty(), "planner.w0", "expected \"default\", \"zero\" or an array");
        c.w0 = number_list(w, "planner.w0", w.size());
      }
    }
    r.finish();
  }

  {
    const json sc = root.has("search_control") ? root.at("search_control") : json::object();
    Reader r(sc, "search_control");
    const auto mode = r.get<std::string>("mode", "last_seen");
    require(mode == "last_seen" || mode == "uniform_buffer", "search_control.mode",
            "expected last_seen or uniform_buffer");
    c.search_mode = mode == "last_seen" ? SearchControl::Mode::kLastSeen : SearchControl::Mode::kUniformBuffer;
    const long cap = r.get<long>("capacity", mode == "last_seen" ? 1 : 1000);
    require(cap > 0, "search_control.capacity", "must be positive");
    c.search_capacity = static_cast<std::size_t>(cap);
    r.finish();
  }

  c.steps = root.get<long>("steps");
  require(c.steps > 0, "steps", "must be positive");
  c.planning_steps = root.get<int>("planning_steps", 1);
  require(c.planning_steps >= 0, "planning_steps", "must be non-negative");
  c.log_stride = root.get<long>("log_stride", 100);
  require(c.log_stride > 0, "log_stride", "must be positive");
  c.divergence_threshold = root.get<double>("divergence_threshold", 1e6);
  require(c.divergence_threshold > 0.0, "divergence_threshold", "must be positive");
  c.save_models = root.get<bool>("save_models", false);

  {
    const json& m = root.at("metrics");
    require(m.is_array() && !m.empty(), "metrics", "expected a non-empty array");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto path = "metrics[" + std::to_string(i) + "]";
      const auto name = Reader::convert<std::string>(m[i], path);
      require(name == "rmse" || name == "lstd_loss" || name == "mb_mspbe" || name == "weight_norm", path,
              "unknown metric '" + name + "'");
      require(!(needs_tabular(name) && c.environment == "mountain_car"), path,
              "'" + name + "' needs a tabular environment");
      for (const auto& prev : c.metrics) require(prev != name, path, "duplicate metric");
      c.metrics.push_back(name);
    }
  }

  {
    const json& s = root.at("seeds");
    if (s.is_array()) {
      require(!s.empty(), "seeds", "must be non-empty");
      for (std::size_t i = 0; i < s.size(); ++i)
        c.seeds.push_back(Reader::convert<std::uint64_t>(s[i], "seeds[" + std::to_string(i) + "]"));
    } else {
      Reader r(s, "seeds");
      const int count = r.get<int>("count");
      const auto first = r.get<std::uint64_t>("first", 1);
      require(count > 0, "seeds.count", "must be positive");
      for (int i = 0; i < count; ++i) c.seeds.push_back(first + static_cast<std::uint64_t>(i));
      r.finish();
    }
    std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
    require(unique.size() == c.seeds.size(), "seeds", "duplicate seed");
  }

  if (root.has("lstd_reference")) {
    Reader r(root.at("lstd_reference"), "lstd_reference");
    c.lstd_reference.steps = r.get<long>("steps", c.lstd_reference.steps);
    c.lstd_reference.seed = r.get<std::uint64_t>("seed", c.lstd_reference.seed);
    c.lstd_reference.file = r.get<std::string>("file", "");
    require(c.lstd_reference.steps > 0, "lstd_reference.steps", "must be positive");
    r.finish();
  }
  root.finish();

  json features = {{"name", c.features}};
  if (c.features == "tile") {
    features["tilings"] = c.tilings;
    features["tiles"] = c.tiles;
  }
  json planner = {{"algorithm", c.algorithm}, {"alpha", schedule_json(c.alpha)}};
  if (c.algorithm == "gradient_dyna") planner["beta"] = schedule_json(c.beta);
  if (!c.w0) planner["w0"] = "default";
  else if (c.w0->empty()) planner["w0"] = "zero";
  else planner["w0"] = *c.w0;
  c.source = {
      {"environment", {{"name", c.environment}, {"params", c.environment_params}}},
      {"features", features},
      {"model", {{"kind", c.model}, {"hidden", c.hidden}, {"step", schedule_json(c.model_step)}}},
      {"planner", planner},
      {"search_control",
       {{"mode", c.search_mode == SearchControl::Mode::kLastSeen ? "last_seen" : "uniform_buffer"},
        {"capacity", c.search_capacity}}},
      {"steps", c.steps},
      {"planning_steps", c.planning_steps},
      {"metrics", c.metrics},
      {"seeds", c.seeds},
      {"log_stride", c.log_stride},
      {"divergence_threshold", c.divergence_threshold},
      {"lstd_reference",
       {{"steps", c.lstd_reference.steps}, {"seed", c.lstd_reference.seed}, {"file", c.lstd_reference.file}}},
      {"save_models", c.save_models},
  };
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

std::string config_hash(const ExperimentConfig& config) { return hex(fnv1a(config.source.dump())); }

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> Setup::make_environment(std::uint64_t seed) const {
  if (tabular) return std::make_unique<TabularSimulator>(tabular->mdp, tabular->features, behavior, seed);
  return std::make_unique<MountainCar>(car->params, behavior, seed);
}

namespace {

TabularProblem rebind_one_hot(TabularProblem p) {
  const int n = p.mdp.num_states();
  FeatureTable table(Matrix::Identity(n, n));
  p.behavior = bind_features(Policy::from_table(p.behavior.table()), table);
  p.target = bind_features(Policy::from_table(p.target.table()), table);
  p.features = table;
  p.initial_weights = Vector::Zero(n);
  return p;
}

}  // namespace

Setup build_setup(const ExperimentConfig& config) {
  Setup s;
  s.name = config.environment;
  const json& p = config.environment_params;
  const double gamma = p.at("gamma").get<double>();
  if (config.environment == "two_state") {
    TwoStateParams tp;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t a = 0; a < 2; ++a) tp.move[i][a] = p["move"][i][a].get<double>();
    tp.behavior_s1 = {p["behavior"][0][0].get<double>(), p["behavior"][0][1].get<double>()};
    tp.behavior_s2 = {p["behavior"][1][0].get<double>(), p["behavior"][1][1].get<double>()};
    tp.target_s1 = {p["target"][0][0].get<double>(), p["target"][0][1].get<double>()};
    tp.target_s2 = {p["target"][1][0].get<double>(), p["target"][1][1].get<double>()};
    tp.reward = p["reward"].get<double>();
    tp.features = {p["features"][0].get<double>(), p["features"][1].get<double>()};
    tp.gamma = gamma;
    s.tabular = make_two_state(tp);
  } else if (config.environment == "baird") {
    s.tabular = make_baird(gamma);
  } else if (config.environment == "four_rooms") {
    FourRoomsParams fp;
    fp.sticky = p.at("sticky").get<double>();
    fp.gamma = gamma;
    fp.features = config.features == "one_hot" ? FourRoomsFeatures::kOneHot : FourRoomsFeatures::kTiles;
    if (config.features == "tile") {
      fp.num_tilings = config.tilings;
      fp.tiles_per_dim = config.tiles;
    }
    s.tabular = make_four_rooms(fp).problem;
  } else {
    MountainCarParams mp;
    mp.sticky = p.at("sticky").get<double>();
    mp.behavior_randomness = p.at("behavior_randomness").get<double>();
    mp.gamma = gamma;
    mp.num_tilings = config.tilings;
    mp.tiles_per_dim = config.tiles;
    s.car = make_mountain_car(mp);
  }
  if (s.tabular && config.features == "one_hot" && config.environment != "four_rooms")
    s.tabular = rebind_one_hot(std::move(*s.tabular));

  if (s.tabular) {
    for (const auto& w : s.tabular->warnings) warn(s.name + ": " + w);
    s.behavior = s.tabular->behavior;
    s.target = s.tabular->target;
    s.dim = s.tabular->features.dim();
    s.num_actions = s.tabular->mdp.num_actions();
    s.gamma = s.tabular->mdp.gamma();
    s.default_w0 = s.tabular->initial_weights;
    s.true_values = exact_value(s.tabular->mdp, s.target);
    try {
      s.mu = stationary_distribution(s.tabular->mdp, s.behavior, &s.tabular->features).mu;
    } catch (const NonErgodicChain& e) {
      warn(s.name + ": " + e.what());
    }
  } else {
    s.behavior = s.car->behavior;
    s.target = s.car->target;
    s.dim = s.car->coder.size();
    s.num_actions = 3;
    s.gamma = s.car->params.gamma;
    s.default_w0 = Vector::Zero(s.dim);
  }

  if (config.w0 && !config.w0->empty())
    require(static_cast<int>(config.w0->size()) == s.dim, "planner.w0",
            "expected " + std::to_string(s.dim) + " entries for these features");
  for (const auto& metric : config.metrics) {
    if (metric == "mb_mspbe") {
      require(s.mu.has_value(), "metrics", "mb_mspbe needs an ergodic behaviour chain");
      const auto diag = feature_moment_checks(*s.mu);
      require(diag.second_moment_ok, "metrics",
              "mb_mspbe needs a non-singular feature second moment (smallest singular value " +
                  number(diag.second_moment_min_sv) + ")");
    }
  }
  if (config.model == "best_oracle") require(s.mu.has_value(), "model.kind", "best_oracle needs an ergodic chain");
  return s;
}

// ---------------------------------------------------------------------------

namespace {

double importance_ratio(const Setup& setup, const Transition& t) {
  const double b = setup.behavior.feature_probs(t.phi)(t.action);
  if (b <= 0.0) throw UnsupportedAction("behaviour policy assigns zero probability to an observed action");
  return setup.target.feature_probs(t.phi)(t.action) / b;
}

constexpr char kReferenceMagic[8] = {'G', 'D', 'Y', 'N', 'A', 'L', 'S', 'D'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
T take(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof value);
  if (!in) throw ConfigError("lstd reference: truncated file");
  return value;
}

}  // namespace

LstdReference reference_lstd(const Setup& setup, long steps, std::uint64_t seed) {
  auto env = setup.make_environment(seed);
  LSTDAccumulator acc(setup.dim, setup.gamma);
  for (long i = 0; i < steps; ++i) {
    const Transition t = env->step();
    acc.update(t, importance_ratio(setup, t));
  }
  LstdReference ref;
  ref.a = acc.a();
  ref.c = acc.c();
  ref.steps = steps;
  ref.seed = seed;
  try {
    const SolveResult sol = checked_solve<SingularAccumulator>(ref.a, ref.c, "A_LSTD");
    ref.w = sol.x;
    ref.rank = setup.dim;
    ref.condition = sol.condition;
  } catch (const SingularAccumulator& e) {
    // Tile codings are structurally rank deficient; the loss only needs A
    // and c, so fall back to the minimum-norm solution for w.
    const MinNormResult mn = min_norm_solve(ref.a, ref.c);
    ref.w = mn.x;
    ref.rank = static_cast<int>(mn.rank);
    ref.condition = mn.condition;
    warn(std::string("lstd reference: ") + e.what() + "; using the minimum-norm solution (rank " +
         std::to_string(mn.rank) + " of " + std::to_string(setup.dim) + ")");
  }
  return ref;
}

void save_reference(const LstdReference& ref, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path + ": cannot write lstd reference");
  out.write(kReferenceMagic, sizeof kReferenceMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ref.c.size()));
  put<std::int64_t>(out, ref.steps);
  put<std::uint64_t>(out, ref.seed);
  put<std::int32_t>(out, ref.rank);
  put<double>(out, ref.condition);
  for (Eigen::Index i = 0; i < ref.a.rows(); ++i)
    for (Eigen::Index j = 0; j < ref.a.cols(); ++j) put<double>(out, ref.a(i, j));
  for (Eigen::Index i = 0; i < ref.c.size(); ++i) put<double>(out, ref.c(i));
  for (Eigen::Index i = 0; i < ref.w.size(); ++i) put<double>(out, ref.w(i));
}

LstdReference load_reference(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open lstd reference");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kReferenceMagic, sizeof magic) != 0)
    throw ConfigError(path + ": not an lstd reference file");
  if (take<std::uint32_t>(in) != 1) throw ConfigError(path + ": unsupported lstd reference version");
  const auto m = static_cast<Eigen::Index>(take<std::uint32_t>(in));
  LstdReference ref;
  ref.steps = take<std::int64_t>(in);
  ref.seed = take<std::uint64_t>(in);
  ref.rank = take<std::int32_t>(in);
  ref.condition = take<double>(in);
  ref.a.resize(m, m);
  ref.c.resize(m);
  ref.w.resize(m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) ref.a(i, j) = take<double>(in);
  for (Eigen::Index i = 0; i < m; ++i) ref.c(i) = take<double>(in);
  for (Eigen::Index i = 0; i < m; ++i) ref.w(i) = take<double>(in);
  return ref;
}

namespace {

LstdReference resolve_reference(const ExperimentConfig& config, const Setup& setup) {
  const auto& spec = config.lstd_reference;
  if (!spec.file.empty() && std::filesystem::exists(spec.file)) {
    LstdReference ref = load_reference(spec.file);
    if (ref.c.size() == setup.dim && ref.steps == spec.steps && ref.seed == spec.seed) return ref;
    warn("lstd reference " + spec.file + " does not match the config; recomputing");
  }
  LstdReference ref = reference_lstd(setup, spec.steps, spec.seed);
  if (!spec.file.empty()) save_reference(ref, spec.file);
  return ref;
}

std::unique_ptr<ExpectationModel> make_model(const ExperimentConfig& config, const Setup& setup,
                                             std::uint64_t seed) {
  if (config.model == "linear") return std::make_unique<LinearExpectationModel>(setup.dim, setup.num_actions);
  if (config.model == "mlp") {
    auto m = std::make_unique<MLPExpectationModel>(setup.dim, setup.num_actions, config.hidden);
    m->init_xavier(derive_seed(seed, 2));
    return m;
  }
  const auto& p = *setup.tabular;
  return std::make_unique<TableExpectationModel>(best_nonlinear(p.mdp, setup.behavior, p.features));
}

Vector initial_weights(const ExperimentConfig& config, const Setup& setup) {
  if (!config.w0) return setup.default_w0;
  if (config.w0->empty()) return Vector::Zero(setup.dim);
  return Eigen::Map<const Vector>(config.w0->data(), static_cast<Eigen::Index>(config.w0->size()));
}

}  // namespace

RunRecord run_seed(const ExperimentConfig& config, const Setup& setup, std::uint64_t seed,
                   const LstdReference* reference) {
  for (const auto& m : config.metrics)
    if (m == "lstd_loss" && !reference) throw ConfigError("metrics: lstd_loss needs an lstd reference");
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.seed = seed;
  rec.config_hash = config_hash(config);
  rec.metrics = config.metrics;

  auto env = setup.make_environment(derive_seed(seed, 1));
  auto model = make_model(config, setup, seed);
  auto* learner = dynamic_cast<LearnableModel*>(model.get());
  SearchControl sc(config.search_mode, config.search_capacity, derive_seed(seed, 3));
  Rng rng(derive_seed(seed, 4));

  const Vector w0 = initial_weights(config, setup);
  const bool gd = config.algorithm == "gradient_dyna";
  GradientDynaState gd_state(w0, config.alpha, config.beta);
  TDPlannerState td_state{w0, config.alpha.at(0)};
  long td_k = 0;
  auto weights = [&]() -> const Vector& { return gd ? gd_state.w : td_state.w; };

  auto metric = [&](const std::string& name) {
    const Vector& w = weights();
    if (name == "rmse") return rmse(w, *setup.true_values, setup.tabular->features);
    if (name == "weight_norm") return w.norm();
    if (name == "lstd_loss") return lstd_loss(w, reference->a, reference->c);
    return mb_mspbe(w, *model, *setup.mu, setup.target, setup.gamma);
  };
  auto divergence_measure = [&] {
    const Vector& w = weights();
    if (!w.allFinite()) return std::numeric_limits<double>::infinity();
    return setup.true_values ? rmse(w, *setup.true_values, setup.tabular->features) : w.norm();
  };
  auto log_row = [&](long step) {
    std::vector<double> row;
    for (const auto& name : config.metrics) {
      const double v = metric(name);
      if (std::isnan(v))
        throw NonFiniteUpdate("metric " + name + " is NaN for seed " + std::to_string(seed), step);
      row.push_back(v);
    }
    rec.steps.push_back(step);
    rec.rows.push_back(std::move(row));
  };

  for (long step = 1; step <= config.steps; ++step) {
    const Transition t = env->step();
    if (learner) learner->learn(t, config.model_step.at(step - 1));
    sc.observe(t.phi_next);
    for (int p = 0; p < config.planning_steps; ++p) {
      if (gd) {
        gradient_dyna_step(gd_state, *model, sc, setup.target, setup.gamma, rng);
      } else {
        const Vector phi = sc.draw();
        td_state.alpha = config.alpha.at(td_k++);
        td0_plan_step(td_state, *model, phi, setup.target.sample_feature(phi, rng), setup.gamma);
      }
    }
    const double measure = divergence_measure();
    if (!(measure <= config.divergence_threshold)) {
      rec.diverged = true;
      rec.diverged_at = step;
      if (std::isfinite(measure)) log_row(step);
      break;
    }
    if (step % config.log_stride == 0) log_row(step);
  }
  rec.final_w = weights();
  rec.final_model = std::move(model);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<RunRecord> run(const ExperimentConfig& config) {
  const Setup setup = build_setup(config);
  std::optional<LstdReference> reference;
  for (const auto& m : config.metrics)
    if (m == "lstd_loss") reference = resolve_reference(config, setup);

  const long n = static_cast<long>(config.seeds.size());
  std::vector<RunRecord> records(static_cast<std::size_t>(n));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      records[static_cast<std::size_t>(i)] =
          run_seed(config, setup, config.seeds[static_cast<std::size_t>(i)], reference ? &*reference : nullptr);
    } catch (...) {
#pragma omp critical(gdyna_run_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return records;
}

// ---------------------------------------------------------------------------

Curves aggregate(const std::vector<RunRecord>& records, bool common_prefix) {
  if (records.empty()) throw MisalignedRecords("aggregate: no records");
  const RunRecord& first = records.front();
  std::size_t rows = first.steps.size();
  for (const auto& r : records) {
    if (r.metrics != first.metrics) throw MisalignedRecords("aggregate: records log different metrics");
    std::size_t shared = 0;
    while (shared < std::min(rows, r.steps.size()) && r.steps[shared] == first.steps[shared]) ++shared;
    if (!common_prefix && (shared != rows || r.steps.size() != rows))
      throw MisalignedRecords("aggregate: records have different step indices");
    rows = shared;
  }
  Curves out;
  out.metrics = first.metrics;
  out.steps.assign(first.steps.begin(), first.steps.begin() + static_cast<long>(rows));
  const std::size_t k = first.metrics.size();
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> mean(k, 0.0), sd(k, 0.0);
    for (const auto& r : records)
      for (std::size_t j = 0; j < k; ++j) mean[j] += r.rows[i][j];
    for (auto& x : mean) x /= n;
    for (const auto& r : records)
      for (std::size_t j = 0; j < k; ++j) sd[j] += (r.rows[i][j] - mean[j]) * (r.rows[i][j] - mean[j]);
    for (auto& x : sd) x = std::sqrt(x / n);
    out.mean.push_back(std::move(mean));
    out.std.push_back(std::move(sd));
  }
  return out;
}

std::string record_csv(const RunRecord& record) {
  std::string out = "step";
  for (const auto& m : record.metrics) out += "," + m;
  out += "\n";
  for (std::size_t i = 0; i < record.steps.size(); ++i) {
    out += std::to_string(record.steps[i]);
    for (const double v : record.rows[i]) out += "," + number(v);
    out += "\n";
  }
  return out;
}

std::string curves_csv(const Curves& curves) {
  std::string out = "step";
  for (const auto& m : curves.metrics) out += "," + m + "_mean," + m + "_std";
  out += "\n";
  for (std::size_t i = 0; i < curves.steps.size(); ++i) {
    out += std::to_string(curves.steps[i]);
    for (std::size_t j = 0; j < curves.metrics.size(); ++j)
      out += "," + number(curves.mean[i][j]) + "," + number(curves.std[i][j]);
    out += "\n";
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(path.string() + ": cannot write");
  out << text;
}

}  // namespace

void write_outputs(const std::string& dir, const ExperimentConfig& config, const std::vector<RunRecord>& records,
                   bool force) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const std::string hash = config_hash(config);
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    std::ifstream in(manifest_path);
    std::string existing;
    try {
      existing = json::parse(in).value("config_hash", "");
    } catch (const json::exception&) {
    }
    if (existing != hash)
      throw OutputConflict(dir + ": holds results for config " + (existing.empty() ? "<unknown>" : existing) +
                           ", not " + hash + " (use --force to overwrite)");
  }
  fs::create_directories(root);

  json runs = json::array();
  double wall = 0.0;
  for (const auto& r : records) {
    write_file(root / ("seed_" + std::to_string(r.seed) + ".csv"), record_csv(r));
    if (config.save_models && r.final_model) {
      std::ofstream out(root / ("model_seed_" + std::to_string(r.seed) + ".bin"), std::ios::binary);
      save_model(*r.final_model, out);
    }
    wall += r.wall_seconds;
    runs.push_back({{"seed", r.seed},
                    {"diverged", r.diverged},
                    {"diverged_at", r.diverged_at},
                    {"rows", r.steps.size()},
                    {"wall_seconds", r.wall_seconds}});
  }
  const Curves curves = aggregate(records, true);
  write_file(root / "aggregate.csv", curves_csv(curves));
  const json manifest = {{"config_hash", hash},
                         {"config", config.source},
                         {"runs", runs},
                         {"aggregate_rows", curves.steps.size()},
                         {"wall_seconds", wall}};
  write_file(manifest_path, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

double latter_half_score(const std::vector<RunRecord>& records, const std::string& metric) {
  double total = 0.0;
  for (const auto& r : records) {
    if (r.diverged || r.steps.empty()) return std::numeric_limits<double>::infinity();
    const auto col = static_cast<std::size_t>(
        std::find(r.metrics.begin(), r.metrics.end(), metric) - r.metrics.begin());
    if (col == r.metrics.size()) throw ConfigError("sweep: metric '" + metric + "' was not logged");
    const long half = r.steps.back() / 2;
    double sum = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < r.steps.size(); ++i)
      if (r.steps[i] > half) {
        sum += r.rows[i][col];
        ++count;
      }
    total += sum / static_cast<double>(count);
  }
  return total / static_cast<double>(records.size());
}

namespace {

void assign_path(json& target, const std::string& path, const json& value) {
  json* node = &target;
  std::size_t begin = 0;
  while (true) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (key.empty()) throw ConfigError("grid: malformed field path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) {
      // A scalar schedule such as "alpha": 0.1 expands to its object form.
      if (next.is_number()) next = json{{"a0", next}};
      else throw ConfigError("grid: '" + path + "' descends into a non-object field");
    }
    node = &next;
    begin = dot + 1;
  }
}

}  // namespace

SweepResult sweep(const ExperimentConfig& base, const json& grid) {
  if (!grid.is_object() || grid.empty()) throw ConfigError("grid: expected a non-empty object of value lists");
  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it->is_array() || it->empty()) throw ConfigError("grid." + it.key() + ": expected a non-empty array");
    axes.emplace_back(it.key(), std::vector<json>(it->begin(), it->end()));
  }
  SweepResult result;
  std::vector<std::size_t> index(axes.size(), 0);
  double best_score = std::numeric_limits<double>::infinity();
  bool have_best = false;
  while (true) {
    json cfg = base.source;
    json assignment = json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].second[index[a]];
      assign_path(cfg, axes[a].first, v);
      assignment[axes[a].first] = v;
    }
    const ExperimentConfig config = parse_config(cfg);
    const auto records = run(config);
    SweepRow row{assignment, latter_half_score(records, config.metrics.front()), 0};
    for (const auto& r : records) row.diverged += r.diverged ? 1 : 0;
    if (!have_best || row.score < best_score) {
      if (std::isfinite(row.score) || !have_best) {
        result.best = result.table.size();
        result.best_config = config;
        best_score = row.score;
        have_best = true;
      }
    }
    result.table.push_back(row);

    std::size_t a = 0;
    while (a < axes.size() && ++index[a] == axes[a].second.size()) index[a++] = 0;
    if (a == axes.size()) break;
  }
  return result;
}

}  // namespace gdyna::harness
