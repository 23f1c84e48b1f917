#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "enfpf/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"EnFPF: assimilation of statistical observations into ensembles"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed_override = 0;
  bool seed_given = false;
  int threads = 1;

  CLI::App* run = app.add_subcommand("run", "Run a configured experiment");
  run->add_option("--config", config_path, "JSON experiment config")->required();
  run->add_option("--out", out_dir, "Output directory (default: out)");
  run->add_option("--seed", seed_override, "Override the config seed")
      ->each([&](const std::string&) { seed_given = true; });
  run->add_option("--threads", threads,
                  "Accepted for interface compatibility; execution is serial so "
                  "outputs are reproducible for any value");

  CLI::App* verify = app.add_subcommand("verify-kb", "Run the grid KB filter verification");
  verify->add_option("--config", config_path, "JSON experiment config")->required();
  verify->add_option("--out", out_dir, "Output directory (default: out)");
  verify->add_option("--seed", seed_override, "Override the config seed")
      ->each([&](const std::string&) { seed_given = true; });

  CLI::App* list = app.add_subcommand("list-experiments", "List known experiment names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (list->parsed()) {
      for (const std::string& name : enfpf::experiment_names()) std::cout << name << "\n";
      return 0;
    }
    enfpf::ExperimentConfig config = enfpf::load_config(config_path);
    if (seed_given) config.seed = seed_override;
    const std::filesystem::path out(out_dir);

    enfpf::ExperimentResult result;
    if (verify->parsed()) {
      if (config.experiment != enfpf::ExperimentKind::kb_verify)
        throw enfpf::ContractViolation("verify-kb needs a kb_verify config");
      result = enfpf::run_kb_verify(config, &out);
    } else {
      result = enfpf::run_experiment(config, &out);
    }
    enfpf::emit_summary(result.summary, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
