// Command-line driver for the tempered Laplace experiments.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tempest/errors.hpp"
#include "tempest/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kNumerical = 1, kIoOrConfig = 2 };

struct GlobalFlags {
  std::string config;
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

tempest::ExperimentConfig resolve_config(const GlobalFlags& flags) {
  tempest::ExperimentConfig c =
      flags.config.empty() ? tempest::parse_config(nlohmann::json::object()) : tempest::load_config(flags.config);
  if (flags.jobs) c.jobs = *flags.jobs;
  if (flags.seed) c.train.seed = *flags.seed;
  if (flags.out) c.output_dir = *flags.out;
  c.validate();
  return c;
}

int run(const std::string& command, const tempest::ExperimentConfig& c) {
  using namespace tempest;
  if (command == "train-map") {
    const auto r = cmd_train_map(c);
    std::size_t rejected = 0;
    for (const auto& s : r.seeds) rejected += s.rejected ? 1 : 0;
    std::cout << "trained " << r.seeds.size() << " MAP estimates (" << rejected << " rejected) into "
              << c.output_dir.string() << "\n";
  } else if (command == "sweep") {
    const auto rows = cmd_sweep(c);
    std::cout << "wrote " << rows.size() << " rows to " << (c.output_dir / "sweep.csv").string() << "\n";
  } else if (command == "map-variability") {
    const auto r = cmd_map_variability(c);
    std::cout << "MAP test zero_one mean " << format_double(r.map_mean_zero_one) << " std "
              << format_double(r.map_std_zero_one) << "\n";
  } else if (command == "bound-curve") {
    const auto r = cmd_bound_curve(c);
    for (const auto& [seed, rho] : r.spearman) std::cout << "seed " << seed << " spearman " << format_double(rho) << "\n";
  } else if (command == "prop-bound") {
    const auto rows = cmd_prop_bound(c);
    std::size_t admissible = 0;
    std::size_t violated = 0;
    for (const auto& r : rows) {
      admissible += r.admissible ? 1 : 0;
      violated += r.violated.value_or(false) ? 1 : 0;
    }
    std::cout << "violations " << violated << " of " << admissible << " admissible rows\n";
  } else if (command == "load-check") {
    const auto r = cmd_load_check(c);
    nlohmann::json j = {{"rows", r.rows}, {"features", r.features}, {"num_classes", r.num_classes},
                        {"label_counts", r.label_counts}};
    std::cout << j.dump() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tempered Laplace posteriors for small MLPs: training, sweeps and PAC-Bayes bounds"};
  app.require_subcommand(1, 1);
  GlobalFlags flags;
  app.add_option("--config", flags.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--jobs", flags.jobs, "worker threads (1 gives bitwise reproducible output)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", flags.seed, "base seed for MAP training and synthetic worlds");
  app.add_option("--out", flags.out, "output directory");

  const char* commands[][2] = {
      {"train-map", "train MAP estimates over seeds and write a manifest"},
      {"sweep", "evaluate tempered posteriors over the lambda grid"},
      {"map-variability", "std of test error across MAP seeds per lambda"},
      {"bound-curve", "Catoni bound against test error per lambda"},
      {"prop-bound", "synthetic-world bound against Monte Carlo risk"},
      {"load-check", "load the configured dataset and print a summary"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kIoOrConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, resolve_config(flags));
  } catch (const tempest::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const tempest::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const tempest::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoOrConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoOrConfig;
  }
}
