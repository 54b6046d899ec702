// cme: drives synthetic data generation, reference training, concept-based
// extraction, evaluation, intervention and visualisation export.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cme/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out_dir;
  bool force = false;
  bool verbose = false;
};

void add_flags(CLI::App* cmd, Flags& flags) {
  cmd->add_option("--config", flags.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Root seed (overrides the config)");
  cmd->add_option("--out-dir", flags.out_dir, "Output directory (overrides the config)");
  cmd->add_flag("--force", flags.force, "Rerun stages whose outputs already exist");
  cmd->add_flag("-v,--verbose", flags.verbose, "Debug logging");
}

cme::pipeline::Config resolve(const Flags& flags) {
  cme::pipeline::Config config = cme::pipeline::load_config(flags.config);
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-based model extraction toolkit"};
  app.require_subcommand(1);
  Flags flags;
  for (const auto& stage : cme::pipeline::stage_names()) {
    add_flags(app.add_subcommand(stage, "Run the '" + stage + "' stage"), flags);
  }
  add_flags(app.add_subcommand("run", "Run every configured stage in order"), flags);
  CLI11_PARSE(app, argc, argv);

  spdlog::set_level(flags.verbose ? spdlog::level::debug : spdlog::level::info);
  try {
    const cme::pipeline::Config config = resolve(flags);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "run") {
      cme::pipeline::run_all(config, flags.force);
    } else {
      cme::pipeline::run_stage(config, name, flags.force);
      cme::pipeline::write_run_manifest(config);
    }
  } catch (const cme::ValidationError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return EXIT_SUCCESS;
}
