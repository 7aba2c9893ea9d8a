#include "fedlora/experiment.hpp"

#include "fedlora/error.hpp"
#include "parallel.hpp"

#include "json.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace fedlora {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string cell(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string();
}

ordered_json opt_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  }
  out << body;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kMissingArtifacts,
                fmt::format("cannot read {}", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     std::chrono::floor<std::chrono::seconds>(
                         std::chrono::system_clock::now()));
}

}  // namespace

std::string rounds_csv(std::span<const RoundLog> logs, std::uint64_t seed) {
  std::string out =
      "round,strategy,seed,normalized_divergence,fedit_divergence,rho,"
      "global_metric,mean_local_metric,gen_gap,train_loss,up_bytes,"
      "down_bytes,na_initial_objective,na_final_objective\n";
  for (const auto& log : logs) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", log.round,
                       to_string(log.strategy), seed,
                       cell(log.divergence.aggregate), cell(log.fedit_divergence),
                       log.divergence.rho, log.global_metric,
                       log.mean_local_metric, log.gen_gap, log.train_loss,
                       log.round_up_bytes, log.round_down_bytes,
                       cell(log.na_initial_objective),
                       cell(log.na_final_objective));
  }
  return out;
}

std::string divergence_csv(std::span<const RoundLog> logs) {
  std::string out = "round,strategy,normalized_divergence\n";
  for (const auto& log : logs) {
    out += fmt::format("{},{},{}\n", log.round, to_string(log.strategy),
                       cell(log.divergence.aggregate));
  }
  return out;
}

std::string gengap_csv(std::span<const RoundLog> logs) {
  std::string out = "round,strategy,global_metric,mean_local_metric,gen_gap\n";
  for (const auto& log : logs) {
    out += fmt::format("{},{},{},{},{}\n", log.round, to_string(log.strategy),
                       log.global_metric, log.mean_local_metric, log.gen_gap);
  }
  return out;
}

std::string round_log_jsonl(const RoundLog& log) {
  ordered_json j;
  j["round"] = log.round;
  j["strategy"] = std::string(to_string(log.strategy));
  ordered_json layers = ordered_json::object();
  for (const auto& [id, raw] : log.divergence.raw) {
    auto it = log.divergence.normalized.find(id);
    layers[id] = {{"raw", raw},
                  {"normalized", it == log.divergence.normalized.end()
                                     ? ordered_json(nullptr)
                                     : opt_json(it->second)}};
  }
  j["divergence"] = {{"per_layer", layers},
                     {"aggregate", opt_json(log.divergence.aggregate)},
                     {"raw_gap", log.divergence.raw_gap},
                     {"rho", log.divergence.rho}};
  j["fedit_divergence"] = opt_json(log.fedit_divergence);
  j["global_metric"] = log.global_metric;
  j["mean_local_metric"] = log.mean_local_metric;
  j["gen_gap"] = log.gen_gap;
  j["train_loss"] = log.train_loss;
  j["comm"] = {{"up_entries", log.comm.up_entries},
               {"down_entries", log.comm.down_entries},
               {"up_bytes", log.comm.up_bytes},
               {"down_bytes", log.comm.down_bytes}};
  j["round_up_bytes"] = log.round_up_bytes;
  j["round_down_bytes"] = log.round_down_bytes;
  j["na_initial_objective"] = opt_json(log.na_initial_objective);
  j["na_final_objective"] = opt_json(log.na_final_objective);
  return j.dump();
}

RoundLog round_log_from_jsonl(const std::string& line) {
  RoundLog log;
  try {
    const auto j = nlohmann::json::parse(line);
    log.round = j.at("round").get<int>();
    log.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    const auto& d = j.at("divergence");
    for (const auto& [id, entry] : d.at("per_layer").items()) {
      log.divergence.raw[id] = entry.at("raw").get<double>();
      log.divergence.normalized[id] = opt_from(entry.at("normalized"));
    }
    log.divergence.aggregate = opt_from(d.at("aggregate"));
    log.divergence.raw_gap = d.at("raw_gap").get<double>();
    log.divergence.rho = d.at("rho").get<double>();
    log.fedit_divergence = opt_from(j.at("fedit_divergence"));
    log.global_metric = j.at("global_metric").get<double>();
    log.mean_local_metric = j.at("mean_local_metric").get<double>();
    log.gen_gap = j.at("gen_gap").get<double>();
    log.train_loss = j.at("train_loss").get<double>();
    const auto& c = j.at("comm");
    log.comm.up_entries = c.at("up_entries").get<std::uint64_t>();
    log.comm.down_entries = c.at("down_entries").get<std::uint64_t>();
    log.comm.up_bytes = c.at("up_bytes").get<std::uint64_t>();
    log.comm.down_bytes = c.at("down_bytes").get<std::uint64_t>();
    log.round_up_bytes = j.at("round_up_bytes").get<std::uint64_t>();
    log.round_down_bytes = j.at("round_down_bytes").get<std::uint64_t>();
    log.na_initial_objective = opt_from(j.at("na_initial_objective"));
    log.na_final_objective = opt_from(j.at("na_final_objective"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, fmt::format("round log: {}", e.what()));
  }
  return log;
}

std::string summary_json(const CellResult& cell) {
  const SimulationConfig& sim = cell.plan.sim;
  ordered_json j;
  j["strategy"] = std::string(to_string(sim.strategy));
  j["seed"] = sim.seed;
  j["sweep_point"] = cell.plan.sweep_point;
  j["dirichlet_alpha"] = sim.dirichlet_alpha;
  j["clients"] = sim.clients;
  j["rounds"] = cell.logs.size();
  if (!cell.logs.empty()) {
    const RoundLog& last = cell.logs.back();
    j["final_global_metric"] = last.global_metric;
    j["final_mean_local_metric"] = last.mean_local_metric;
    j["final_gen_gap"] = last.gen_gap;
    j["final_normalized_divergence"] = opt_json(last.divergence.aggregate);
    double sum = 0.0;
    std::size_t n = 0;
    std::uint64_t bytes = 0;
    for (const auto& log : cell.logs) {
      if (log.divergence.aggregate) {
        sum += *log.divergence.aggregate;
        ++n;
      }
      bytes += log.round_up_bytes + log.round_down_bytes;
    }
    j["mean_normalized_divergence"] =
        n ? ordered_json(sum / static_cast<double>(n)) : ordered_json(nullptr);
    j["total_bytes"] = bytes;
  }
  j["target_metric"] = opt_json(cell.target);
  j["rounds_to_target"] = cell.rounds_to_target
                              ? ordered_json(*cell.rounds_to_target)
                              : ordered_json(nullptr);
  return j.dump(2) + "\n";
}

std::optional<int> rounds_to_target(std::span<const RoundLog> logs,
                                    double target) {
  for (const auto& log : logs) {
    if (log.global_metric >= target) return log.round;
  }
  return std::nullopt;
}

namespace {

CellResult run_cell(const ExperimentConfig& config, const RunPlan& plan,
                    bool resume) {
  const auto start = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  const fs::path dir = config.output_dir / plan.subdir;
  fs::create_directories(dir);
  const fs::path checkpoint = dir / "checkpoint.json";
  const fs::path jsonl = dir / "rounds.jsonl";

  CellResult result;
  result.plan = plan;
  std::optional<Simulation> sim;
  const bool resumed = resume && fs::exists(checkpoint) && fs::exists(jsonl);
  if (resumed) {
    sim.emplace(Simulation::resume(plan.sim, checkpoint));
    const auto lines = lines_of(read_file(jsonl));
    const int done = sim->state().round;
    if (static_cast<int>(lines.size()) < done) {
      throw Error(ErrorCode::kMissingArtifacts,
                  fmt::format("{} has {} rounds, checkpoint expects {}",
                              jsonl.string(), lines.size(), done));
    }
    for (int r = 0; r < done; ++r) result.logs.push_back(round_log_from_jsonl(lines[r]));
  } else {
    sim.emplace(plan.sim);
  }

  std::string jsonl_body;
  for (const auto& log : result.logs) jsonl_body += round_log_jsonl(log) + "\n";
  while (sim->state().round < plan.sim.rounds) {
    result.logs.push_back(sim->run_round());
    jsonl_body += round_log_jsonl(result.logs.back()) + "\n";
    if (config.checkpoint) {
      write_file(jsonl, jsonl_body);
      sim->save_checkpoint(checkpoint);
    }
  }
  const auto seed = plan.sim.seed;
  write_file(jsonl, jsonl_body);
  write_file(dir / "rounds.csv", rounds_csv(result.logs, seed));
  write_file(dir / "divergence.csv", divergence_csv(result.logs));
  write_file(dir / "gengap.csv", gengap_csv(result.logs));
  write_file(dir / "comm.csv", sim->state().ledger.to_csv());

  result.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ordered_json meta;
  meta["started_utc"] = started;
  meta["finished_utc"] = utc_now();
  meta["wall_clock_s"] = result.wall_clock_s;
  meta["resumed"] = resumed;
  write_file(dir / "meta.json", meta.dump(2) + "\n");
  return result;
}

}  // namespace

std::vector<CellResult> run_cells(const ExperimentConfig& config,
                                  std::span<const RunPlan> plans,
                                  const RunOptions& options) {
  std::vector<CellResult> cells(plans.size());
  detail::parallel_for(plans.size(), options.threads, [&](std::size_t i) {
    const RunPlan& plan = plans[i];
    try {
      cells[i] = run_cell(config, plan, options.resume);
    } catch (const Error& e) {
      throw Error(e.code(),
                  fmt::format("{}{}{} seed {}: {}", plan.sweep_point,
                              plan.sweep_point.empty() ? "" : " ",
                              to_string(plan.sim.strategy), plan.sim.seed,
                              e.what()));
    }
  });

  // Targets compare strategies that share a seed and sweep point.
  if (config.target_fraction) {
    std::map<std::pair<std::string, std::uint64_t>, double> best;
    for (const auto& c : cells) {
      if (c.logs.empty()) continue;
      const auto key = std::make_pair(c.plan.sweep_point, c.plan.sim.seed);
      const double final = c.logs.back().global_metric;
      auto [it, inserted] = best.emplace(key, final);
      if (!inserted) it->second = std::max(it->second, final);
    }
    for (auto& c : cells) {
      auto it = best.find({c.plan.sweep_point, c.plan.sim.seed});
      if (it == best.end()) continue;
      const double b = it->second;
      c.target = b - (1.0 - *config.target_fraction) * std::abs(b);
      c.rounds_to_target = rounds_to_target(c.logs, *c.target);
    }
  }
  for (const auto& c : cells) {
    write_file(config.output_dir / c.plan.subdir / "summary.json", summary_json(c));
  }
  return cells;
}

std::vector<CellResult> run_experiment(const ExperimentConfig& config,
                                       const RunOptions& options) {
  const auto plans = run_plans(config);
  return run_cells(config, plans, options);
}

std::vector<CellResult> run_sweep(const ExperimentConfig& config,
                                  const RunOptions& options) {
  const auto plans = sweep_plans(config);
  return run_cells(config, plans, options);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Rows of a CSV keyed by header name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  const auto lines = lines_of(read_file(path));
  if (lines.empty()) {
    throw Error(ErrorCode::kMissingArtifacts,
                fmt::format("{} is empty", path.string()));
  }
  const auto header = split_csv(lines.front());
  std::vector<std::map<std::string, std::string>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_csv(lines[i]);
    std::map<std::string, std::string> row;
    for (std::size_t c = 0; c < header.size() && c < fields.size(); ++c) {
      row[header[c]] = fields[c];
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<fs::path> emit_plots_data(const fs::path& run_dir,
                                      std::optional<fs::path> out_dir) {
  if (!fs::is_directory(run_dir)) {
    throw Error(ErrorCode::kMissingArtifacts,
                fmt::format("run directory {} does not exist", run_dir.string()));
  }
  std::vector<fs::path> summaries;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.json") {
      summaries.push_back(entry.path());
    }
  }
  if (summaries.empty()) {
    throw Error(ErrorCode::kMissingArtifacts,
                fmt::format("no completed runs under {}", run_dir.string()));
  }
  std::sort(summaries.begin(), summaries.end());

  using SeriesKey = std::tuple<std::string, std::string, int>;  // point, strategy, round
  std::map<SeriesKey, std::vector<double>> div;
  std::map<SeriesKey, std::array<std::vector<double>, 3>> gap;
  using FinalKey = std::tuple<std::string, double, std::size_t>;  // strategy, alpha, U
  std::map<FinalKey, std::vector<double>> finals;

  for (const auto& path : summaries) {
    nlohmann::json s;
    try {
      s = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError,
                  fmt::format("{}: {}", path.string(), e.what()));
    }
    const fs::path dir = path.parent_path();
    const auto point = s.at("sweep_point").get<std::string>();
    const auto strategy = s.at("strategy").get<std::string>();
    for (const auto& row : read_csv(dir / "divergence.csv")) {
      const std::string& v = row.at("normalized_divergence");
      if (v.empty()) continue;
      div[{point, strategy, std::stoi(row.at("round"))}].push_back(std::stod(v));
    }
    for (const auto& row : read_csv(dir / "gengap.csv")) {
      auto& g = gap[{point, strategy, std::stoi(row.at("round"))}];
      g[0].push_back(std::stod(row.at("global_metric")));
      g[1].push_back(std::stod(row.at("mean_local_metric")));
      g[2].push_back(std::stod(row.at("gen_gap")));
    }
    if (s.contains("final_global_metric")) {
      finals[{strategy, s.at("dirichlet_alpha").get<double>(),
              s.at("clients").get<std::size_t>()}]
          .push_back(s.at("final_global_metric").get<double>());
    }
  }

  const fs::path out = out_dir.value_or(run_dir / "plots");
  fs::create_directories(out);
  std::string body = "sweep_point,strategy,round,mean_normalized_divergence,seeds\n";
  for (const auto& [key, values] : div) {
    const auto& [point, strategy, round] = key;
    body += fmt::format("{},{},{},{},{}\n", point, strategy, round, mean(values),
                        values.size());
  }
  const fs::path div_path = out / "divergence_vs_round.csv";
  write_file(div_path, body);

  body = "sweep_point,strategy,round,mean_global_metric,mean_local_metric,"
         "mean_gen_gap,seeds\n";
  for (const auto& [key, g] : gap) {
    const auto& [point, strategy, round] = key;
    body += fmt::format("{},{},{},{},{},{},{}\n", point, strategy, round,
                        mean(g[0]), mean(g[1]), mean(g[2]), g[0].size());
  }
  const fs::path gap_path = out / "gengap_vs_round.csv";
  write_file(gap_path, body);

  body = "strategy,dirichlet_alpha,clients,median_final_global_metric,seeds\n";
  for (const auto& [key, values] : finals) {
    const auto& [strategy, alpha, clients] = key;
    body += fmt::format("{},{},{},{},{}\n", strategy, alpha, clients,
                        median(values), values.size());
  }
  const fs::path alpha_path = out / "final_metric_vs_alpha.csv";
  write_file(alpha_path, body);
  return {div_path, gap_path, alpha_path};
}

std::vector<ComparisonRow> compare_decomposition(const ExperimentConfig& config) {
  SimulationConfig sim_config = config.base;
  sim_config.strategy = Strategy::kFedIt;
  sim_config.seed = config.seeds.front();
  const Simulation sim(sim_config);
  std::vector<ClientUpdate> updates;
  for (auto& trained : sim.train_clients()) updates.push_back(std::move(trained.update));
  const ClientWeights w = sim_config.weighting == Weighting::kSamples
                              ? ClientWeights::by_samples(updates)
                              : ClientWeights::uniform(updates.size());
  return compare_execution(updates, w, sim.state().model.layer_ids.front(),
                           sim_config.rank, sim_config.solver);
}

}  // namespace fedlora
