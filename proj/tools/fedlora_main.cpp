// Command-line front end: run, sweep, compare-decomposition and
// emit-plots-data over YAML experiment configs.

#include "fedlora/config.hpp"
#include "fedlora/error.hpp"
#include "fedlora/experiment.hpp"

#include "CLI11.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace fedlora;
namespace fs = std::filesystem;

constexpr const char* kOutputEnv = "FEDLORA_OUTPUT_DIR";

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonOptions {
  std::string config;
  std::string out;
  std::string seeds;
  std::string strategies;
  int threads = 1;
  bool dry_run = false;
  bool resume = false;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first != std::string::npos) items.push_back(item.substr(first, last - first + 1));
  }
  return items;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& text, const char* field) {
  std::vector<T> values;
  for (const auto& item : split_list(text)) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        values.push_back(static_cast<T>(std::stod(item, &used)));
      } else {
        if (item.front() == '-') throw std::invalid_argument(item);
        values.push_back(static_cast<T>(std::stoull(item, &used)));
      }
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kValidationError,
                  fmt::format("{}: cannot parse '{}'", field, item));
    }
  }
  if (values.empty()) {
    throw Error(ErrorCode::kValidationError, fmt::format("{}: empty list", field));
  }
  return values;
}

// Output directory precedence: --out, then the environment, then the config.
ExperimentConfig load(const CommonOptions& opts) {
  ExperimentConfig config = parse_config(opts.config);
  if (!opts.seeds.empty()) {
    config.seeds = parse_numbers<std::uint64_t>(opts.seeds, "seeds");
  }
  if (!opts.strategies.empty()) {
    config.strategies.clear();
    for (const auto& name : split_list(opts.strategies)) {
      config.strategies.push_back(strategy_from_string(name));
    }
  }
  if (const char* env = std::getenv(kOutputEnv); env && *env) config.output_dir = env;
  if (!opts.out.empty()) config.output_dir = opts.out;
  if (opts.threads < 1) {
    throw Error(ErrorCode::kValidationError, "threads: must be >= 1");
  }
  config.validate();
  return config;
}

void print_plans(const ExperimentConfig& config, const std::vector<RunPlan>& plans) {
  std::cout << config_to_yaml(config);
  std::cout << fmt::format("# {} run plan(s)\n", plans.size());
  for (const auto& plan : plans) {
    std::cout << "#   " << (config.output_dir / plan.subdir).string() << '\n';
  }
}

void print_cells(const ExperimentConfig& config, const std::vector<CellResult>& cells) {
  for (const auto& cell : cells) {
    if (cell.logs.empty()) continue;
    const RoundLog& last = cell.logs.back();
    std::cout << fmt::format(
        "{:<40} rounds={} global={:.6g} gen_gap={:.6g} divergence={}\n",
        (config.output_dir / cell.plan.subdir).string(), cell.logs.size(),
        last.global_metric, last.gen_gap,
        last.divergence.aggregate ? fmt::format("{:.6g}", *last.divergence.aggregate)
                                  : std::string("n/a"));
  }
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_resume) {
  cmd->add_option("--config", opts.config, "Experiment config (YAML)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opts.out,
                  fmt::format("Output directory (overrides ${} and the config)",
                              kOutputEnv));
  cmd->add_option("--seeds", opts.seeds, "Comma-separated seeds, e.g. 1,2,3");
  cmd->add_option("--strategies", opts.strategies,
                  "Comma-separated strategies: IDEAL,FEDIT,FFA,FEDSA,STACK,FEDEX,FLORA_NA");
  cmd->add_option("--threads", opts.threads, "Cells run concurrently")
      ->capture_default_str();
  cmd->add_flag("--dry-run", opts.dry_run,
                "Print the effective config and run plans, then exit");
  if (with_resume) {
    cmd->add_flag("--resume", opts.resume,
                  "Continue cells from their checkpoint.json (needs checkpoint: true)");
  }
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kParseError:
    case ErrorCode::kValidationError:
    case ErrorCode::kInvalidSpec:
    case ErrorCode::kInvalidDimensions:
    case ErrorCode::kInsufficientSamples:
      return kExitConfig;
    default:
      return is_numeric_failure(e.code()) ? kExitNumeric : kExitFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LoRA aggregation simulator"};
  app.footer(config_reference() +
             fmt::format("\nEnvironment: {} overrides the output directory.\n"
                         "Exit codes: 0 ok, 2 config error, 3 numeric failure.\n",
                         kOutputEnv));
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "Run every (strategy, seed) cell");
  add_common(run, run_opts, true);

  CommonOptions sweep_opts;
  std::string sweep_alphas;
  std::string sweep_clients;
  auto* sweep = app.add_subcommand("sweep", "Sweep Dirichlet alpha and/or client count");
  add_common(sweep, sweep_opts, true);
  sweep->add_option("--alphas", sweep_alphas, "Comma-separated Dirichlet alphas");
  sweep->add_option("--clients", sweep_clients, "Comma-separated client counts");

  CommonOptions cmp_opts;
  auto* compare = app.add_subcommand(
      "compare-decomposition",
      "SVD vs Gram-Schmidt vs coefficient solver on one round's ideal aggregate");
  add_common(compare, cmp_opts, false);

  std::string plots_dir;
  std::string plots_out;
  auto* plots = app.add_subcommand("emit-plots-data",
                                   "Tidy plot CSVs from a finished run directory");
  plots->add_option("run_dir", plots_dir, "Run directory (default: $" +
                                              std::string(kOutputEnv) + ")");
  plots->add_option("--out", plots_out, "Where to write the CSVs (default RUN_DIR/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run || *sweep) {
      const bool is_sweep = static_cast<bool>(*sweep);
      const CommonOptions& opts = is_sweep ? sweep_opts : run_opts;
      ExperimentConfig config = load(opts);
      if (is_sweep) {
        if (!sweep_alphas.empty()) {
          config.sweep.dirichlet_alphas = parse_numbers<double>(sweep_alphas, "alphas");
        }
        if (!sweep_clients.empty()) {
          config.sweep.clients = parse_numbers<std::size_t>(sweep_clients, "clients");
        }
        config.validate();
      }
      const auto plans = is_sweep ? sweep_plans(config) : run_plans(config);
      if (opts.dry_run) {
        print_plans(config, plans);
        return kExitOk;
      }
      fs::create_directories(config.output_dir);
      {
        std::ofstream echo(config.output_dir / "config.yaml");
        echo << config_to_yaml(config);
      }
      RunOptions options;
      options.threads = opts.threads;
      options.resume = opts.resume;
      const auto cells = run_cells(config, plans, options);
      print_cells(config, cells);
      return kExitOk;
    }
    if (*compare) {
      ExperimentConfig config = load(cmp_opts);
      if (cmp_opts.dry_run) {
        print_plans(config, {});
        return kExitOk;
      }
      const auto rows = compare_decomposition(config);
      const std::string csv = comparison_csv(rows);
      fs::create_directories(config.output_dir);
      std::ofstream(config.output_dir / "comparison.csv") << csv;
      std::cout << csv;
      return kExitOk;
    }
    if (*plots) {
      fs::path dir = plots_dir;
      if (dir.empty()) {
        const char* env = std::getenv(kOutputEnv);
        if (!env || !*env) {
          throw Error(ErrorCode::kValidationError,
                      fmt::format("run_dir: give a directory or set {}", kOutputEnv));
        }
        dir = env;
      }
      std::optional<fs::path> out;
      if (!plots_out.empty()) out = plots_out;
      for (const auto& path : emit_plots_data(dir, out)) {
        std::cout << path.string() << '\n';
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
