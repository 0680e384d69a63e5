// Command-line front end: validate a velocity model, solve a run config
// along the k ladder, or re-derive reports from stored fields.

#include "dvm/cli.hpp"

#include <CLI11.hpp>

#include <exception>
#include <iostream>

int main(int argc, char **argv) {
  CLI::App app{"Stationary discrete-velocity Boltzmann solver"};
  app.require_subcommand(1);

  std::string model, cert_out;
  auto *validate = app.add_subcommand("validate", "Certify a velocity model");
  validate->add_option("model", model, "Model JSON file")->required();
  validate->add_option("--out", cert_out, "Also write the certificate to this file");

  std::string config, out_dir;
  auto *solve = app.add_subcommand("solve", "Run the k ladder of a config");
  solve->add_option("--config", config, "Run config JSON")->required();
  solve->add_option("--out", out_dir, "Output directory (overrides the config)");

  std::string fields, dconfig;
  auto *diagnose = app.add_subcommand("diagnose", "Recompute reports from stored fields");
  diagnose->add_option("--fields", fields, "Directory written by solve")->required();
  diagnose->add_option("--config", dconfig, "Run config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*validate)
      return dvm::cmd_validate(model, cert_out, std::cout, std::cerr);
    if (*solve)
      return dvm::cmd_solve(config, out_dir, std::cout, std::cerr);
    return dvm::cmd_diagnose(fields, dconfig, std::cout, std::cerr);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
