#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tacforge/workbench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"tacforge: simulated tactile datasets, marker translation and force transfer"};
  app.require_subcommand(1, 1);
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
  for (const char* name : {"generate", "translate", "train", "eval", "fit-material", "translate-taxel"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "TOML config")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out, "output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return tacforge::run_command(command, config, seed, out, std::cerr);
}
