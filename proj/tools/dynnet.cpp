#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "dynnet/harness.hpp"

namespace h = dynnet::harness;

int main(int argc, char** argv) {
  CLI::App app{"Contact process on dynamical random graphs: simulation, sweeps, phase maps, checks"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed, reps, jobs;
  std::optional<double> t_max;
  std::vector<int> only;
  for (auto e : {h::Experiment::Simulate, h::Experiment::Sweep, h::Experiment::Phase, h::Experiment::Diagnose,
                 h::Experiment::Theory, h::Experiment::Validate}) {
    auto* sub = app.add_subcommand(std::string(h::to_string(e)));
    sub->add_option("--config", config_path, "JSON experiment config");
    sub->add_option("--seed", seed, "Base seed (overrides config and DYNNET_SEED)");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--reps", reps, "Replica count");
    sub->add_option("--jobs", jobs, "Worker threads; results do not depend on it");
    sub->add_option("--t-max", t_max, "Time horizon");
    if (e == h::Experiment::Validate) sub->add_option("--only", only, "Check ids to run")->delimiter(',');
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? h::kOk : h::kBadConfig;
  }
  const auto* sub = app.get_subcommands().front();

  // Seed precedence: flag > config > DYNNET_SEED > built-in default.
  h::ExperimentConfig cfg;
  try {
    if (const char* env = std::getenv("DYNNET_SEED")) {
      try {
        cfg.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw h::ConfigError(std::string("DYNNET_SEED is not an unsigned integer: ") + env);
      }
    }
    if (!config_path.empty()) cfg = h::load_config(config_path, cfg);
  } catch (const h::ConfigError& e) {
    std::cerr << "bad config: " << e.what() << '\n';
    return h::kBadConfig;
  }
  cfg.experiment = h::experiment_from_string(sub->get_name());
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (reps) cfg.reps = *reps;
  if (jobs) cfg.jobs = *jobs;
  if (t_max) cfg.t_max = *t_max;
  if (!only.empty()) cfg.only = only;
  return h::run_experiment(cfg, std::cout, std::cerr);
}
