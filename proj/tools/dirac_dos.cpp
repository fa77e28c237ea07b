// dirac-dos: experiment runner.
//
//   dirac-dos <run|kind> --config PATH [--seed N] [--jobs K] [--out DIR]
//   dirac-dos --list-models
//
// Exit codes: 0 success, 1 usage, 2 config/validation, 3 compute or I/O, 4 precondition.

#include <iostream>
#include <optional>
#include <string>

#include <CLI/CLI.hpp>

#include "diracdos/cli/runner.hpp"

namespace {

using diracdos::cli::json;

int report(int code, const std::string& type, const std::string& message, const json& extra = json::object()) {
  json err = {{"code", code}, {"type", type}, {"message", message}};
  for (auto it = extra.begin(); it != extra.end(); ++it) err[it.key()] = it.value();
  std::cerr << json{{"error", err}}.dump() << std::endl;
  return code;
}

struct Invocation {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
};

int run(const std::string& sub, const Invocation& inv) {
  namespace cli = diracdos::cli;
  try {
    const json doc = cli::load_config_document(inv.config);
    const cli::ExperimentConfig cfg = cli::parse_config(doc, sub == "run" ? "" : sub, inv.seed);
    std::size_t jobs = inv.jobs.value_or(cfg.jobs != 0 ? cfg.jobs : cli::default_jobs());
    if (jobs < 1) throw cli::ConfigError("--jobs must be >= 1");
    std::string out = inv.out;
    if (out.empty()) out = cfg.output_dir.empty() ? "out/" + cfg.kind : cfg.output_dir;
    const auto man = cli::run_and_write(cfg, out, jobs);
    std::cout << json{{"status", "ok"},
                      {"kind", cfg.kind},
                      {"output_dir", out},
                      {"config_sha256", man.config_sha256},
                      {"files", man.files.size()},
                      {"wall_clock_seconds", man.wall_clock_seconds}}
                     .dump()
              << std::endl;
    return 0;
  } catch (const cli::ConfigError& e) {
    return report(2, "config", e.what(), {{"missing", e.missing}, {"unknown", e.unknown}, {"invalid", e.invalid}});
  } catch (const diracdos::ValidationError& e) {
    return report(2, "validation", e.what());
  } catch (const diracdos::PreconditionError& e) {
    return report(4, "precondition", e.what());
  } catch (const diracdos::ComputeError& e) {
    return report(3, "compute", e.what());
  } catch (const cli::IoError& e) {
    return report(3, "io", e.what());
  } catch (const std::exception& e) {
    return report(3, "compute", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random Dirac operator density-of-states experiments", "dirac-dos"};
  bool list_models = false;
  app.add_flag("--list-models", list_models, "Print the model registry and exit");
  app.set_version_flag("--version", std::string("dirac-dos ") + diracdos::cli::kToolVersion);
  app.require_subcommand(0, 1);

  Invocation inv;
  std::vector<std::string> names{"run"};
  for (const auto& k : diracdos::cli::experiment_kinds()) names.push_back(k);
  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(
        name, name == "run" ? "Run the experiment kind named in the config" : "Run the " + name + " experiment");
    sub->add_option("--config", inv.config, "Experiment config (TOML, or JSON)")->required();
    sub->add_option("--seed", inv.seed, "Override the base seed");
    sub->add_option("--jobs", inv.jobs, "Worker threads (default: config, then DIRAC_DOS_JOBS, then 1)")
        ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
    sub->add_option("--out", inv.out, "Output directory (default: config output_dir, then out/<kind>)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (list_models) {
    for (const auto& m : diracdos::list_models()) std::cout << m.name << "\t" << m.description << "\n";
    return 0;
  }
  const auto chosen = app.get_subcommands();
  if (chosen.empty()) {
    std::cerr << app.help();
    return 1;
  }
  return run(chosen.front()->get_name(), inv);
}
