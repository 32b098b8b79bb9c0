#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "fedlm/commands.hpp"
#include "fedlm/config.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

fedlm::ExperimentConfig load(const std::string& path,
                             const std::optional<std::uint64_t>& seed,
                             const std::string& out) {
  fedlm::ExperimentConfig cfg =
      path.empty() ? fedlm::parse_config_text("{}") : fedlm::parse_config(path);
  if (seed) cfg.fed.seed = *seed;
  if (!out.empty()) cfg.output_dir = out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale federated language-model training simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool cost_only = false;
  std::vector<std::string> csvs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (defaults if omitted)");
    sub->add_option("--seed", seed, "Master seed, overrides the config");
    sub->add_option("--out", out, "Output directory, overrides the config");
  };
  CLI::App* pretrain = app.add_subcommand("pretrain", "Centralized pretraining for warm starts");
  add_common(pretrain);
  CLI::App* federated = app.add_subcommand("federated", "Run a federated experiment");
  add_common(federated);
  federated->add_flag("--cost-only", cost_only,
                      "Project communication cost for the declared rounds without training");
  CLI::App* report = app.add_subcommand("report", "Merge metrics CSVs into one long table");
  report->add_option("csvs", csvs, "metrics CSV files")->required();
  std::string report_out = "report.csv";
  report->add_option("--out", report_out, "Merged CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*pretrain) {
      const auto cfg = load(config_path, seed, out);
      fedlm::cmd_pretrain(cfg, cfg.output_dir, std::cout);
    } else if (*federated) {
      const auto cfg = load(config_path, seed, out);
      fedlm::cmd_federated(cfg, cfg.output_dir, cost_only, std::cout);
    } else if (*report) {
      std::vector<std::filesystem::path> paths(csvs.begin(), csvs.end());
      fedlm::cmd_report(paths, report_out, std::cout);
    }
  } catch (const fedlm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
