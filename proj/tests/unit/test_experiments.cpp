#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stochsplit/experiments.hpp"

using namespace stochsplit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json counterexample_config() {
  return json::parse(R"({"experiment": "counterexample", "seed": 3, "params": {"t": 1.0, "n": [4, 64], "paths": 20}})");
}

// Small, fast instance of every experiment kind.
json tiny_config(const std::string& kind) {
  if (kind == "matrix-converge")
    return json::parse(R"({"experiment": "matrix-converge", "seed": 1, "params": {"system": "noncommuting",
      "schemes": ["euler_maruyama", "trotter_piecewise"], "n": [4, 8, 16], "paths": 200, "reference_level": 8}})");
  if (kind == "counterexample") return counterexample_config();
  if (kind == "sse-growth")
    return json::parse(R"({"experiment": "sse-growth", "seed": 1, "params": {"paths": 200,
      "indicator_grid": {"half_width": 2.0, "points": 256}, "grid": {"half_width": 8.0, "points": 128},
      "residual_states": 5}})");
  if (kind == "sse-martingale")
    return json::parse(R"({"experiment": "sse-martingale", "seed": 1, "params": {
      "grid": {"half_width": 8.0, "points": 128}, "martingale": {"n": [4, 16], "paths": 100},
      "ordering": {"n": [4, 16], "paths": 50}}})");
  if (kind == "collapse-equivalence")
    return json::parse(R"({"experiment": "collapse-equivalence", "seed": 1, "params": {"paths": 300,
      "grid": {"half_width": 8.0, "points": 128}, "flash": {"draws": 2000}}})");
  if (kind == "lindblad-check")
    return json::parse(R"({"experiment": "lindblad-check", "seed": 1, "params": {"paths": 300, "steps": 4,
      "grw": {"alpha": 0.01, "d": 1.0}}})");
  if (kind == "continuum-limit")
    return json::parse(R"({"experiment": "continuum-limit", "seed": 1, "params": {"alphas": [2.0, 1.0],
      "paths": 100, "reference_steps": 16, "bootstrap": 5, "grid": {"half_width": 8.0, "points": 128}}})");
  FAIL("no tiny config for " << kind);
  return {};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("stochsplit_test_" + name);
  fs::remove_all(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STOCHSPLIT_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("counterexample run reports e and passes") {
  const auto r = run_experiment(counterexample_config());
  REQUIRE(r.all_pass());
  REQUIRE(r.criteria.size() == 2);
  CHECK(r.criteria[0].measured == Catch::Approx(2.718281828459045).epsilon(1e-12));
  const auto s = json::parse(r.files.files().at("summary.json"));
  CHECK(s["experiment"] == "counterexample");
  CHECK(s["pass"] == true);
  for (const auto& c : s["criteria"])
    for (const char* key : {"experiment", "criterion", "measured", "tolerance", "pass"}) CHECK(c.contains(key));
  CHECK(r.files.files().count("ratios.csv") == 1);
}

TEST_CASE("config validation rejects bad input before running") {
  auto bad = [](const std::string& text) {
    CHECK_THROWS_AS(validate_config(json::parse(text)), ConfigError);
  };
  bad(R"({"experiment": "lindblad-check", "seed": 1, "params": {"lambda": -1.0}})");
  bad(R"({"experiment": "collapse-equivalence", "seed": 1, "params": {"lambda": -1.0}})");
  bad(R"({"experiment": "counterexample", "seed": 1, "params": {"n": [4, 6]}})");
  bad(R"({"experiment": "counterexample", "seed": 1, "params": {"n": [8, 4]}})");
  bad(R"({"experiment": "counterexample", "seed": 1, "params": {"t": "one"}})");
  bad(R"({"experiment": "counterexample", "seed": 1, "params": {"tee": 1.0}})");
  bad(R"({"experiment": "counterexample", "seed": -1, "params": {}})");
  bad(R"({"experiment": "counterexample", "params": {}})");
  bad(R"({"experiment": "counterexample", "seed": 1, "extra": 0, "params": {}})");
  bad(R"({"experiment": "warp-drive", "seed": 1, "params": {}})");
  bad(R"({"experiment": "matrix-converge", "seed": 1, "params": {"system": "noncommuting",
        "schemes": ["partial_split"], "n": [4], "paths": 10}})");
  bad(R"({"experiment": "matrix-converge", "seed": 1, "params": {"system": "noncommuting",
        "schemes": ["euler_maruyama"], "n": [64], "paths": 10, "reference_level": 4}})");
  bad(R"({"experiment": "sse-martingale", "seed": 1, "params": {}})");
  bad(R"({"experiment": "sse-growth", "seed": 1, "params": {"checks": ["everything"]}})");
  bad(R"([1, 2, 3])");
  // Engine-level rejections surface as config errors too.
  bad(R"({"experiment": "sse-martingale", "seed": 1, "params": {"grid": {"half_width": 2.0, "points": 64},
        "packet": {"sigma": 3.0}, "martingale": {"n": [4], "paths": 4}}})");
  CHECK_THROWS_AS(run_experiment(json::parse(R"({"experiment": "sse-martingale", "seed": 1, "params": {
        "grid": {"half_width": 2.0, "points": 64}, "packet": {"sigma": 3.0}, "martingale": {"n": [4], "paths": 4}}})")),
                  ConfigError);
}

TEST_CASE("catalog lists every kind and each kind runs") {
  const auto text = list_experiments();
  CHECK(text.find("matrix-converge") != std::string::npos);
  CHECK(text.find("continuum-limit") != std::string::npos);
  REQUIRE(experiment_catalog().size() == 7);
  for (const auto& e : experiment_catalog()) {
    INFO(e.kind);
    CHECK(text.find(e.kind) != std::string::npos);
    const auto r = run_experiment(tiny_config(e.kind));
    CHECK(r.experiment == e.kind);
    CHECK_FALSE(r.criteria.empty());
    CHECK(r.files.files().size() >= 2);
  }
}

TEST_CASE("outputs do not depend on the worker count") {
  for (const char* kind : {"matrix-converge", "sse-martingale", "continuum-limit"}) {
    INFO(kind);
    const auto a = run_experiment(tiny_config(kind), 1);
    const auto b = run_experiment(tiny_config(kind), 3);
    CHECK(a.files.files() == b.files.files());
  }
}

TEST_CASE("seed sweep aggregates per criterion") {
  const auto cfg = counterexample_config();
  const std::vector<std::uint64_t> same{5, 5};
  const auto s = seed_sweep(cfg, same);
  for (const auto& stat : s.aggregate["statistics"]) CHECK(stat["stddev"].get<double>() == 0.0);

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto m = seed_sweep(tiny_config("sse-martingale"), seeds);
  REQUIRE(m.runs.size() == 3);
  const auto& stats = m.aggregate["statistics"];
  for (const auto& stat : stats) {
    const auto values = stat["values"].get<std::vector<double>>();
    const double mean = (values[0] + values[1] + values[2]) / 3.0;
    CHECK(stat["mean"].get<double>() == Catch::Approx(mean).epsilon(1e-14));
  }
  CHECK(sweep_bundle(m).files().count("seed_2/martingale.csv") == 1);
  CHECK(sweep_bundle(m).files().count("sweep_summary.json") == 1);
  const std::vector<std::uint64_t> one{1};
  CHECK_THROWS_AS(seed_sweep(cfg, one), ConfigError);
}

TEST_CASE("martingale estimates agree across seeds within sampling error") {
  auto cfg = json::parse(R"({"experiment": "sse-martingale", "seed": 1, "params": {
      "grid": {"half_width": 8.0, "points": 128}, "martingale": {"n": [16], "paths": 400}}})");
  std::vector<double> mean, se;
  for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
    cfg["seed"] = seed;
    const auto r = run_experiment(cfg);
    const auto rows = r.files.files().at("martingale.csv");
    std::istringstream in(rows);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    std::istringstream fields(line);
    std::string n, m, s;
    std::getline(fields, n, ',');
    std::getline(fields, m, ',');
    std::getline(fields, s, ',');
    mean.push_back(std::stod(m));
    se.push_back(std::stod(s));
  }
  for (std::size_t i = 0; i < mean.size(); ++i)
    for (std::size_t j = i + 1; j < mean.size(); ++j)
      CHECK(std::abs(mean[i] - mean[j]) <= 4.0 * std::hypot(se[i], se[j]));
}

TEST_CASE("command line: exit codes, determinism, no partial output") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const auto good = dir / "good.json";
  std::ofstream(good) << counterexample_config().dump();
  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"experiment": "lindblad-check", "seed": 1, "params": {"lambda": -1.0}})";
  const auto failing = dir / "failing.json";
  std::ofstream(failing) << R"({"experiment": "counterexample", "seed": 1, "params": {"t": 1.0, "n": [4],
      "paths": 3, "tolerance": 1e-300}})";

  CHECK(run_cli("run " + (dir / "bad.json").string() + " --out " + (dir / "bad_out").string()) == 2);
  CHECK_FALSE(fs::exists(dir / "bad_out"));
  CHECK(run_cli("run " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("frobnicate") == 2);

  REQUIRE(run_cli("run " + good.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli("run " + good.string() + " --out " + (dir / "b").string() + " --threads 2") == 0);
  CHECK(slurp(dir / "a" / "ratios.csv") == slurp(dir / "b" / "ratios.csv"));
  CHECK(slurp(dir / "a" / "summary.json") == slurp(dir / "b" / "summary.json"));
  CHECK_FALSE(fs::exists(dir / "a" / ".staging"));

  CHECK(run_cli("run " + failing.string() + " --out " + (dir / "f").string()) == 1);
  CHECK(fs::exists(dir / "f" / "summary.json"));

  CHECK(run_cli("sweep " + good.string() + " --seeds 1,2 --out " + (dir / "s").string()) == 0);
  CHECK(fs::exists(dir / "s" / "seed_1" / "ratios.csv"));
  CHECK(fs::exists(dir / "s" / "sweep_summary.json"));
  CHECK(run_cli("sweep " + good.string() + " --seeds 1 --out " + (dir / "s1").string()) == 2);
  CHECK_FALSE(fs::exists(dir / "s1"));
  CHECK(run_cli("list") == 0);
  fs::remove_all(dir);
}
