// Command-line driver: generate | train-gp | calibrate | influence | separability.
#include <iostream>

#include "CLI11.hpp"
#include "tenduq/tenduq.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Args {
  std::string config;
  std::string mode;
  bool plots = false;
  std::optional<std::uint64_t> seed;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tenduq: uncertainty-aware calibration of tendon break models"};
  app.require_subcommand(1);
  Args args;
  for (const char* name : {"generate", "train-gp", "calibrate", "influence", "separability"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config, "run configuration (JSON)")->required();
    sub->add_option("--mode", args.mode, "plain or embedded")->check(CLI::IsMember({"plain", "embedded"}));
    sub->add_flag("--plots", args.plots, "also write SVG figures");
    sub->add_option("--seed", args.seed, "override the configured seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = tenduq::load_config(args.config);
    if (args.seed) cfg.seed = *args.seed;
    tenduq::CommandOptions opt;
    opt.plots = args.plots;
    if (!args.mode.empty()) opt.mode = tenduq::calibration_mode_from_string(args.mode);
    for (const auto& path : tenduq::run_command(command, cfg, opt)) std::cout << "wrote " << path.string() << '\n';
    return 0;
  } catch (const tenduq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const tenduq::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}
