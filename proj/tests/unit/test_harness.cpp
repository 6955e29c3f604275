#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <limits>

#include "gdyna/harness.hpp"

using namespace gdyna;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json two_state_config() {
  return json::parse(R"({
    "environment": {"name": "two_state"},
    "model": {"kind": "linear", "step": 0.05},
    "planner": {"algorithm": "gradient_dyna", "alpha": 0.05, "beta": 0.2},
    "steps": 600,
    "log_stride": 50,
    "metrics": ["rmse", "mb_mspbe", "weight_norm"],
    "seeds": [1, 2]
  })");
}

std::string error_of(const json& j) {
  try {
    harness::parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gdyna_test_" + name);
  fs::remove_all(dir);
  return dir;
}

harness::RunRecord constant_record(std::uint64_t seed, double value, int rows) {
  harness::RunRecord r;
  r.seed = seed;
  r.metrics = {"rmse"};
  for (int i = 0; i < rows; ++i) {
    r.steps.push_back(100L * (i + 1));
    r.rows.push_back({value});
  }
  return r;
}

template <class... R>
std::vector<harness::RunRecord> records(R&&... r) {
  std::vector<harness::RunRecord> out;
  (out.push_back(std::forward<R>(r)), ...);
  return out;
}

}  // namespace

TEST_CASE("config parsing fills defaults") {
  const auto c = harness::parse_config(two_state_config());
  CHECK(c.environment == "two_state");
  CHECK(c.features == "scalar");
  CHECK(c.hidden == 200);
  CHECK(c.alpha.a0 == 0.05);
  CHECK(c.alpha.power == 0.0);
  CHECK(c.search_mode == SearchControl::Mode::kLastSeen);
  CHECK(c.planning_steps == 1);
  CHECK(c.divergence_threshold == 1e6);
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.source["environment"]["params"]["gamma"] == 0.9);

  json tiles = json::parse(R"({
    "environment": {"name": "four_rooms"}, "model": {"kind": "mlp"},
    "planner": {"algorithm": "td0", "alpha": 0.1}, "steps": 10, "metrics": ["lstd_loss"],
    "seeds": {"count": 3, "first": 5}, "search_control": {"mode": "uniform_buffer"}})");
  const auto f = harness::parse_config(tiles);
  CHECK(f.features == "tile");
  CHECK(f.tilings == 4);
  CHECK(f.tiles == 2);
  CHECK(f.search_capacity == 1000u);
  CHECK(f.seeds == std::vector<std::uint64_t>{5, 6, 7});
}

TEST_CASE("config errors name the offending field") {
  auto j = two_state_config();
  j["planner"]["alhpa"] = 0.1;
  CHECK(error_of(j).find("planner.alhpa") != std::string::npos);

  j = two_state_config();
  j["planner"].erase("beta");
  CHECK(error_of(j).find("planner.beta") != std::string::npos);

  j = two_state_config();
  j["metrics"] = {"rmse", "accuracy"};
  CHECK(error_of(j).find("metrics[1]") != std::string::npos);

  j = two_state_config();
  j["environment"]["params"] = {{"gamma", 1.0}};
  CHECK(error_of(j).find("environment.params.gamma") != std::string::npos);

  j = two_state_config();
  j["steps"] = "many";
  CHECK(error_of(j).find("steps") != std::string::npos);

  j = two_state_config();
  j["seeds"] = {1, 1};
  CHECK(error_of(j).find("seeds") != std::string::npos);

  j = two_state_config();
  j["environment"]["name"] = "mountain_car";
  j["features"] = "tile";
  CHECK(error_of(j).find("metrics") != std::string::npos);

  j = two_state_config();
  j["environment"]["name"] = "mountain_car";
  j["metrics"] = {"weight_norm"};
  j["model"]["kind"] = "best_oracle";
  CHECK(error_of(j).find("model.kind") != std::string::npos);
}

TEST_CASE("config hash is stable and content-sensitive") {
  const auto a = harness::parse_config(two_state_config());
  const auto b = harness::parse_config(two_state_config());
  CHECK(harness::config_hash(a) == harness::config_hash(b));
  CHECK(harness::config_hash(a).size() == 16u);
  auto j = two_state_config();
  j["planner"]["alpha"] = 0.051;
  CHECK(harness::config_hash(harness::parse_config(j)) != harness::config_hash(a));
  // Spelling out a default does not change the hash.
  j = two_state_config();
  j["planning_steps"] = 1;
  CHECK(harness::config_hash(harness::parse_config(j)) == harness::config_hash(a));
}

TEST_CASE("setup validates the initial weights") {
  auto j = two_state_config();
  j["planner"]["w0"] = {1.0, 2.0};
  CHECK_THROWS_AS(harness::build_setup(harness::parse_config(j)), ConfigError);
  j["planner"]["w0"] = {1.5};
  const auto setup = harness::build_setup(harness::parse_config(j));
  CHECK(setup.dim == 1);
  CHECK(setup.true_values.has_value());
}

TEST_CASE("runs are deterministic per seed") {
  const auto config = harness::parse_config(two_state_config());
  const auto setup = harness::build_setup(config);
  const auto a = harness::run_seed(config, setup, 1, nullptr);
  const auto b = harness::run_seed(config, setup, 1, nullptr);
  const auto c = harness::run_seed(config, setup, 2, nullptr);
  CHECK(harness::record_csv(a) == harness::record_csv(b));
  CHECK(harness::record_csv(a) != harness::record_csv(c));
  CHECK(a.steps.size() == 12u);
  CHECK(a.steps.front() == 50);
  CHECK(harness::record_csv(a).rfind("step,rmse,mb_mspbe,weight_norm\n", 0) == 0);
}

TEST_CASE("lstd_loss needs a reference") {
  auto j = two_state_config();
  j["metrics"] = {"lstd_loss"};
  const auto config = harness::parse_config(j);
  const auto setup = harness::build_setup(config);
  CHECK_THROWS_AS(harness::run_seed(config, setup, 1, nullptr), ConfigError);
  const auto ref = harness::reference_lstd(setup, 20000, 3);
  const auto rec = harness::run_seed(config, setup, 1, &ref);
  CHECK(rec.rows.size() == 12u);
}

TEST_CASE("divergent runs stop early and are flagged") {
  auto j = two_state_config();
  j["planner"] = {{"algorithm", "td0"}, {"alpha", 50.0}};
  j["model"] = {{"kind", "best_oracle"}};
  j["divergence_threshold"] = 1e3;
  const auto config = harness::parse_config(j);
  const auto setup = harness::build_setup(config);
  auto rec = harness::run_seed(config, setup, 1, nullptr);
  CHECK(rec.diverged);
  CHECK(rec.diverged_at > 0);
  CHECK(harness::latter_half_score(records(std::move(rec)), "rmse") == std::numeric_limits<double>::infinity());
}

TEST_CASE("aggregation: mean and population std") {
  const auto curves = harness::aggregate(records(constant_record(1, 1.0, 3), constant_record(2, 3.0, 3)));
  REQUIRE(curves.mean.size() == 3u);
  CHECK(curves.mean[0][0] == 2.0);
  CHECK(curves.std[0][0] == 1.0);
  const auto single = harness::aggregate(records(constant_record(1, 4.0, 2)));
  CHECK(single.std[1][0] == 0.0);
  CHECK(harness::curves_csv(single).rfind("step,rmse_mean,rmse_std\n", 0) == 0);

  CHECK_THROWS_AS(harness::aggregate(records(constant_record(1, 1.0, 3), constant_record(2, 3.0, 2))), MisalignedRecords);
  const auto prefix = harness::aggregate(records(constant_record(1, 1.0, 3), constant_record(2, 3.0, 2)), true);
  CHECK(prefix.steps.size() == 2u);
  CHECK_THROWS_AS(harness::aggregate(records()), ConfigError);
}

TEST_CASE("latter-half score averages the second half over seeds") {
  auto r = constant_record(1, 1.0, 4);
  r.rows[2][0] = 3.0;
  r.rows[3][0] = 5.0;
  CHECK(harness::latter_half_score(records(std::move(r), constant_record(2, 2.0, 4)), "rmse") == doctest::Approx(3.0));
}

TEST_CASE("outputs refuse to mix configurations") {
  const fs::path dir = scratch_dir("outputs");
  auto j = two_state_config();
  j["steps"] = 100;
  const auto config = harness::parse_config(j);
  const auto records = harness::run(config);
  harness::write_outputs(dir.string(), config, records, false);
  CHECK(fs::exists(dir / "seed_1.csv"));
  CHECK(fs::exists(dir / "seed_2.csv"));
  CHECK(fs::exists(dir / "aggregate.csv"));
  std::ifstream in(dir / "manifest.json");
  const json manifest = json::parse(in);
  CHECK(manifest["config_hash"] == harness::config_hash(config));

  // Same config overwrites silently; another one needs force.
  CHECK_NOTHROW(harness::write_outputs(dir.string(), config, records, false));
  j["steps"] = 150;
  const auto other = harness::parse_config(j);
  CHECK_THROWS_AS(harness::write_outputs(dir.string(), other, harness::run(other), false), harness::OutputConflict);
  CHECK_NOTHROW(harness::write_outputs(dir.string(), other, harness::run(other), true));
  fs::remove_all(dir);
}

TEST_CASE("LSTD reference files round-trip") {
  const auto config = harness::parse_config(two_state_config());
  const auto setup = harness::build_setup(config);
  const auto ref = harness::reference_lstd(setup, 5000, 8);
  const fs::path path = fs::temp_directory_path() / "gdyna_test_reference.bin";
  harness::save_reference(ref, path.string());
  const auto back = harness::load_reference(path.string());
  CHECK(back.a == ref.a);
  CHECK(back.c == ref.c);
  CHECK(back.w == ref.w);
  CHECK(back.steps == 5000);
  CHECK(back.seed == 8u);
  fs::remove(path);
  CHECK_THROWS_AS(harness::load_reference(path.string()), ConfigError);
  // Same seed, same statistics.
  CHECK(harness::reference_lstd(setup, 5000, 8).a == ref.a);
}

TEST_CASE("sweep scores every grid point and picks the lowest") {
  auto j = two_state_config();
  j["steps"] = 400;
  j["seeds"] = {1};
  j["metrics"] = {"rmse"};
  j["model"] = {{"kind", "best_oracle"}};
  j["planner"] = {{"algorithm", "td0"}, {"alpha", 0.05}};
  j["divergence_threshold"] = 1e3;
  const auto base = harness::parse_config(j);
  const auto result = harness::sweep(base, json{{"planner.alpha.a0", {0.05, 50.0}}});
  REQUIRE(result.table.size() == 2u);
  CHECK(std::isfinite(result.table[0].score));
  CHECK(result.table[1].score == std::numeric_limits<double>::infinity());
  CHECK(result.table[1].diverged == 1);
  CHECK(result.best == 0u);
  CHECK(result.best_config.alpha.a0 == 0.05);
  CHECK_THROWS_AS(harness::sweep(base, json{{"planner.gamma", {0.1}}}), ConfigError);
}
