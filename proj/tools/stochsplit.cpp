// Command-line driver for the stochsplit experiments.
//
//   stochsplit run <config.json> [--out DIR] [--threads N]
//   stochsplit sweep <config.json> --seeds 1,2,3 [--out DIR] [--threads N]
//   stochsplit list
//
// Exit status: 0 all criteria pass, 1 some criterion fails, 2 bad config or
// runtime error (nothing is written in that case). STOCHSPLIT_MAX_THREADS caps
// --threads.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "stochsplit/experiments.hpp"

namespace {

void print_criteria(const stochsplit::ExperimentResult& r) {
  for (const auto& c : r.criteria) {
    std::cerr << (c.diagnostic ? "[diag] " : (c.pass ? "[pass] " : "[FAIL] ")) << r.experiment << " " << c.name
              << " measured=" << stochsplit::format_double(c.measured) << " tolerance=" << c.tolerance.dump() << "\n";
  }
}

std::string output_dir(const nlohmann::json& config, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (config.contains("output_dir") && config["output_dir"].is_string() && !config["output_dir"].get<std::string>().empty())
    return config["output_dir"].get<std::string>();
  return "out/" + config.value("experiment", std::string("run")) + "_seed" +
         std::to_string(config.value("seed", std::uint64_t{0}));
}

int capped_threads(int requested) {
  if (const char* env = std::getenv("STOCHSPLIT_MAX_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0 && cap < requested) return static_cast<int>(cap);
  }
  return requested;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic product formulas: convergence and collapse-model experiments"};
  app.require_subcommand(1);

  std::string config_path, out;
  int threads = 1;
  std::vector<std::uint64_t> seeds;

  auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory (overrides output_dir in the config)");
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "Run one config over several seeds and aggregate the criteria");
  sweep->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sweep->add_option("--seeds", seeds, "Comma-separated seeds")->required()->delimiter(',');
  sweep->add_option("--out", out, "Output directory");
  sweep->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  app.add_subcommand("list", "List experiment kinds and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("list")) {
      std::cout << stochsplit::list_experiments();
      return 0;
    }
    threads = capped_threads(threads);
    const auto config = stochsplit::load_config(config_path);
    if (app.got_subcommand("run")) {
      const auto result = stochsplit::run_experiment(config, threads);
      result.files.commit(output_dir(config, out));
      print_criteria(result);
      std::cout << result.summary().dump(2) << "\n";
      return result.all_pass() ? 0 : 1;
    }
    const auto result = stochsplit::seed_sweep(config, seeds, threads);
    stochsplit::sweep_bundle(result).commit(output_dir(config, out));
    for (const auto& r : result.runs) print_criteria(r);
    std::cout << result.aggregate.dump(2) << "\n";
    return result.all_pass() ? 0 : 1;
  } catch (const stochsplit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
