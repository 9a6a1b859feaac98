#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "kdesign/config.hpp"
#include "kdesign/experiment.hpp"

using namespace kdesign;

int main(int argc, char** argv) {
  CLI::App app{"k-space acquisition design: gridsize, averaging pattern, and "
               "reconstruction parameters under a fixed scan-time budget"};
  app.require_subcommand(0, 1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool dump = false;
  app.add_option("--config", config_path, "experiment config file (defaults apply if omitted)");
  auto* seed_opt = app.add_option(
      "--seed", seed,
      "override the seed of the chosen subcommand (generate: dataset, "
      "design/sweep: training, evaluate: noise draws)");
  app.add_flag("--dump-config", dump, "print the effective config and exit");

  auto* generate = app.add_subcommand("generate", "synthesize the dataset and write it to disk");
  auto* design = app.add_subcommand(
      "design", "jointly optimize gridsize, averaging pattern, and reconstruction parameters");
  auto* evaluate = app.add_subcommand("evaluate", "score a finished design on the test split");
  auto* sweep =
      app.add_subcommand("sweep", "design + evaluate every (snr, method, mode) cell");
  // Let `kdesign design --config x` work: route the global options through.
  for (CLI::App* sub : {generate, design, evaluate, sweep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed_opt->count() > 0) {
      if (generate->parsed()) cfg.dataset_seed = seed;
      else if (evaluate->parsed()) cfg.evaluate_seed = seed;
      else cfg.design_seed = seed;
    }

    if (dump) {
      std::cout << dump_config(cfg);
      return 0;
    }
    if (generate->parsed()) {
      cmd_generate(cfg, std::cout);
    } else if (design->parsed()) {
      cmd_design(cfg, std::cout);
    } else if (evaluate->parsed()) {
      cmd_evaluate(cfg, std::cout);
    } else if (sweep->parsed()) {
      cmd_sweep(cfg, std::cout);
    } else {
      std::cerr << app.help();
      return 1;
    }
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: kind=%s msg=%s\n", e.kind().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: kind=unknown msg=%s\n", e.what());
    return 1;
  }
}
