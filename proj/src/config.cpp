#include "fedlora/config.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace fedlora {

namespace {

[[noreturn]] void fail_field(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::kValidationError, fmt::format("{}: {}", field, msg));
}

std::string location(std::string_view source, const YAML::Node& node) {
  const YAML::Mark mark = node.Mark();
  if (mark.is_null()) return std::string(source);
  return fmt::format("{}:{}", source, mark.line + 1);
}

/// Reads the keys of one mapping, remembering which were consumed so the
/// leftovers can be reported as unknown.
class Section {
 public:
  Section(const YAML::Node& node, std::string prefix, std::string_view source)
      : node_(node), prefix_(std::move(prefix)), source_(source) {
    if (!node_.IsMap()) {
      throw Error(ErrorCode::kParseError,
                  fmt::format("{}: '{}' must be a mapping",
                              location(source_, node_),
                              prefix_.empty() ? "<root>" : prefix_));
    }
  }

  std::string field(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  bool has(const std::string& key) const { return node_[key].IsDefined(); }

  template <typename T>
  void read(const std::string& key, T& out) {
    YAML::Node value = get(key);
    if (!value.IsDefined() || value.IsNull()) return;
    out = as<T>(key, value);
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    YAML::Node value = get(key);
    if (!value.IsDefined() || value.IsNull()) return;
    out = as<T>(key, value);
  }

  template <typename T>
  std::vector<T> read_list(const std::string& key) {
    YAML::Node value = get(key);
    std::vector<T> out;
    if (!value.IsDefined() || value.IsNull()) return out;
    if (!value.IsSequence()) {
      fail_field(field(key), fmt::format("expected a list ({})",
                                         location(source_, value)));
    }
    for (const auto& item : value) out.push_back(as<T>(key, item));
    return out;
  }

  Section child(const std::string& key) {
    return Section(get(key), field(key), source_);
  }

  void reject_unknown() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.contains(key)) {
        throw Error(ErrorCode::kParseError,
                    fmt::format("{}: unknown key '{}'",
                                location(source_, kv.first), field(key)));
      }
    }
  }

 private:
  template <typename T>
  T as(const std::string& key, const YAML::Node& value) const {
    if constexpr (std::is_unsigned_v<T>) {
      // yaml-cpp happily wraps "-3" into a huge unsigned value.
      const auto text = value.IsScalar() ? value.Scalar() : std::string();
      if (!text.empty() && text.front() == '-') {
        fail_field(field(key), fmt::format("must be non-negative ({})",
                                           location(source_, value)));
      }
    }
    try {
      return value.as<T>();
    } catch (const YAML::Exception&) {
      fail_field(field(key), fmt::format("cannot read value ({})",
                                         location(source_, value)));
    }
  }

  YAML::Node node_;
  std::string prefix_;
  std::string_view source_;
  std::set<std::string> seen_;
};

Strategy parse_strategy(const std::string& name) {
  try {
    return strategy_from_string(name);
  } catch (const Error&) {
    fail_field("strategies", fmt::format("unknown strategy '{}'", name));
  }
}

void read_task(Section s, TaskSpec& task) {
  std::string kind(to_string(task.kind));
  s.read("kind", kind);
  try {
    task.kind = task_kind_from_string(kind);
  } catch (const Error&) {
    fail_field(s.field("kind"), fmt::format("unknown task kind '{}'", kind));
  }
  s.read("input_dim", task.input_dim);
  s.read("output_dim", task.output_dim);
  s.read("layers", task.layers);
  s.read("clusters", task.clusters);
  s.read("delta_rank", task.delta_rank);
  s.read("shift_scale", task.shift_scale);
  s.read("perturbation_scale", task.perturbation_scale);
  s.read("noise_std", task.noise_std);
  s.read("train_samples", task.train_samples);
  s.read("test_samples", task.test_samples);
  s.read("local_test_fraction", task.local_test_fraction);
  s.reject_unknown();
}

void read_solver(Section s, SolverConfig& solver) {
  s.read("steps", solver.steps);
  s.read("learning_rate", solver.learning_rate);
  s.read("beta1", solver.beta1);
  s.read("beta2", solver.beta2);
  s.read("epsilon", solver.epsilon);
  s.read("init_scale", solver.init_scale);
  s.read("gauge", solver.gauge);
  s.reject_unknown();
}

void read_compression(Section s, CompressionSpec& spec) {
  std::string mode(to_string(spec.mode));
  s.read("mode", mode);
  try {
    spec.mode = compression_mode_from_string(mode);
  } catch (const Error&) {
    fail_field(s.field("mode"), fmt::format("unknown mode '{}'", mode));
  }
  s.read("bits", spec.bits);
  s.read("keep_fraction", spec.keep_fraction);
  s.reject_unknown();
}

// Signed read for counts so that "-3" becomes a validation error naming the
// field instead of a wrapped unsigned value.
template <typename T>
void read_count(Section& s, const std::string& key, T& out) {
  std::optional<long long> value;
  s.read(key, value);
  if (!value) return;
  if (*value < 1) fail_field(s.field(key), "must be >= 1");
  out = static_cast<T>(*value);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (strategies.empty()) fail_field("strategies", "must not be empty");
  if (seeds.empty()) fail_field("seeds", "must not be empty");
  if (output_dir.empty()) fail_field("output_dir", "must not be empty");
  if (target_fraction && !(*target_fraction > 0.0 && *target_fraction <= 1.0)) {
    fail_field("target_fraction", "must lie in (0, 1]");
  }
  for (double a : sweep.dirichlet_alphas) {
    if (!(a > 0.0)) fail_field("sweep.dirichlet_alpha", "values must be positive");
  }
  for (std::size_t u : sweep.clients) {
    if (u < 1) fail_field("sweep.clients", "values must be >= 1");
  }
  base.validate();
}

ExperimentConfig parse_config_text(std::string_view text,
                                   std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::kParseError,
                fmt::format("{}:{}: {}", source, e.mark.line + 1, e.msg));
  }
  if (!root.IsDefined() || root.IsNull()) {
    throw Error(ErrorCode::kParseError, fmt::format("{}: empty config", source));
  }

  ExperimentConfig config;
  SimulationConfig& sim = config.base;
  Section s(root, "", source);

  for (const char* required : {"task", "clients", "rounds"}) {
    if (!s.has(required)) fail_field(required, "is required");
  }
  read_task(s.child("task"), sim.task);

  // Counts are read signed so negative values report the field by name.
  read_count(s, "clients", sim.clients);
  read_count(s, "rounds", sim.rounds);
  std::optional<long long> epochs;
  std::optional<long long> steps;
  s.read("epochs", epochs);
  s.read("local_steps", steps);
  if (epochs && steps) {
    fail_field("local_steps", "set either epochs or local_steps, not both");
  }
  if (epochs) {
    if (*epochs < 1) fail_field("epochs", "must be >= 1");
    sim.epochs = static_cast<int>(*epochs);
  }
  if (steps) {
    if (*steps < 1) fail_field("local_steps", "must be >= 1");
    sim.local_steps = static_cast<int>(*steps);
  }
  read_count(s, "batch_size", sim.batch_size);
  s.read("learning_rate", sim.learning_rate);
  std::optional<long long> rank;
  s.read("rank", rank);
  if (rank) {
    if (*rank < 1) fail_field("rank", "must be >= 1");
    sim.rank = static_cast<Index>(*rank);
  }
  s.read("lora_alpha", sim.lora_alpha);
  s.read("dirichlet_alpha", sim.dirichlet_alpha);
  std::string weighting = sim.weighting == Weighting::kUniform ? "uniform" : "samples";
  s.read("weighting", weighting);
  if (weighting == "uniform") {
    sim.weighting = Weighting::kUniform;
  } else if (weighting == "samples") {
    sim.weighting = Weighting::kSamples;
  } else {
    fail_field("weighting", "must be 'uniform' or 'samples'");
  }
  s.read("precision_bits", sim.precision_bits);
  s.read("stack_reinit", sim.stack_reinit);
  read_count(s, "threads", sim.threads);
  if (s.has("solver")) read_solver(s.child("solver"), sim.solver);
  if (s.has("compression")) read_compression(s.child("compression"), sim.compression);

  if (s.has("strategies")) {
    config.strategies.clear();
    for (const auto& name : s.read_list<std::string>("strategies")) {
      config.strategies.push_back(parse_strategy(name));
    }
  }
  if (s.has("seeds")) config.seeds = s.read_list<std::uint64_t>("seeds");
  std::string out = config.output_dir.string();
  s.read("output_dir", out);
  config.output_dir = out;
  s.read("target_fraction", config.target_fraction);
  s.read("checkpoint", config.checkpoint);
  if (s.has("sweep")) {
    Section sweep = s.child("sweep");
    config.sweep.dirichlet_alphas = sweep.read_list<double>("dirichlet_alpha");
    config.sweep.clients = sweep.read_list<std::size_t>("clients");
    sweep.reject_unknown();
  }
  s.reject_unknown();

  config.validate();
  return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kParseError,
                fmt::format("cannot open config '{}'", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path.string());
}

namespace {

// Shortest round-trip text, so echoed configs read like hand-written ones.
std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

std::string config_to_yaml(const ExperimentConfig& config) {
  const SimulationConfig& sim = config.base;
  const TaskSpec& task = sim.task;
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << std::string(to_string(task.kind));
  out << YAML::Key << "input_dim" << YAML::Value << task.input_dim;
  out << YAML::Key << "output_dim" << YAML::Value << task.output_dim;
  out << YAML::Key << "layers" << YAML::Value << task.layers;
  out << YAML::Key << "clusters" << YAML::Value << task.clusters;
  out << YAML::Key << "delta_rank" << YAML::Value << task.delta_rank;
  out << YAML::Key << "shift_scale" << YAML::Value << num(task.shift_scale);
  out << YAML::Key << "perturbation_scale" << YAML::Value << num(task.perturbation_scale);
  out << YAML::Key << "noise_std" << YAML::Value << num(task.noise_std);
  out << YAML::Key << "train_samples" << YAML::Value << task.train_samples;
  out << YAML::Key << "test_samples" << YAML::Value << task.test_samples;
  out << YAML::Key << "local_test_fraction" << YAML::Value << num(task.local_test_fraction);
  out << YAML::EndMap;
  out << YAML::Key << "clients" << YAML::Value << sim.clients;
  out << YAML::Key << "rounds" << YAML::Value << sim.rounds;
  if (sim.local_steps) {
    out << YAML::Key << "local_steps" << YAML::Value << *sim.local_steps;
  } else {
    out << YAML::Key << "epochs" << YAML::Value << sim.epochs;
  }
  out << YAML::Key << "batch_size" << YAML::Value << sim.batch_size;
  out << YAML::Key << "learning_rate" << YAML::Value << num(sim.learning_rate);
  out << YAML::Key << "rank" << YAML::Value << sim.rank;
  out << YAML::Key << "lora_alpha" << YAML::Value << num(sim.lora_alpha);
  out << YAML::Key << "dirichlet_alpha" << YAML::Value << num(sim.dirichlet_alpha);
  out << YAML::Key << "weighting" << YAML::Value
      << (sim.weighting == Weighting::kUniform ? "uniform" : "samples");
  out << YAML::Key << "precision_bits" << YAML::Value << sim.precision_bits;
  out << YAML::Key << "stack_reinit" << YAML::Value << sim.stack_reinit;
  out << YAML::Key << "threads" << YAML::Value << sim.threads;
  out << YAML::Key << "solver" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "steps" << YAML::Value << sim.solver.steps;
  out << YAML::Key << "learning_rate" << YAML::Value << num(sim.solver.learning_rate);
  out << YAML::Key << "beta1" << YAML::Value << num(sim.solver.beta1);
  out << YAML::Key << "beta2" << YAML::Value << num(sim.solver.beta2);
  out << YAML::Key << "epsilon" << YAML::Value << num(sim.solver.epsilon);
  if (sim.solver.init_scale) {
    out << YAML::Key << "init_scale" << YAML::Value << num(*sim.solver.init_scale);
  }
  out << YAML::Key << "gauge" << YAML::Value << num(sim.solver.gauge);
  out << YAML::EndMap;
  out << YAML::Key << "compression" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "mode" << YAML::Value << std::string(to_string(sim.compression.mode));
  out << YAML::Key << "bits" << YAML::Value << sim.compression.bits;
  out << YAML::Key << "keep_fraction" << YAML::Value << num(sim.compression.keep_fraction);
  out << YAML::EndMap;
  out << YAML::Key << "strategies" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (Strategy s : config.strategies) out << std::string(to_string(s));
  out << YAML::EndSeq;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << config.seeds;
  out << YAML::Key << "output_dir" << YAML::Value << config.output_dir.string();
  if (config.target_fraction) {
    out << YAML::Key << "target_fraction" << YAML::Value << num(*config.target_fraction);
  }
  out << YAML::Key << "checkpoint" << YAML::Value << config.checkpoint;
  if (!config.sweep.dirichlet_alphas.empty() || !config.sweep.clients.empty()) {
    out << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "dirichlet_alpha" << YAML::Value << YAML::Flow
        << YAML::BeginSeq;
    for (double a : config.sweep.dirichlet_alphas) out << num(a);
    out << YAML::EndSeq;
    out << YAML::Key << "clients" << YAML::Value << YAML::Flow << config.sweep.clients;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string config_reference() {
  return R"(Config keys (YAML; task, clients and rounds are required):
  task:
    kind                REGRESSION_TEACHER | CLUSTERED_CLASSIFICATION
                        (default REGRESSION_TEACHER)
    input_dim           32
    output_dim          16 (targets or classes, split across layers)
    layers              1
    clusters            2
    delta_rank          4
    shift_scale         1.0
    perturbation_scale  1.0
    noise_std           0.0
    train_samples       2000
    test_samples        1000
    local_test_fraction 0.2
  clients               number of clients U
  rounds                communication rounds R
  epochs | local_steps  local loop length (epochs default 10; give one)
  batch_size            128
  learning_rate         0.01
  rank                  8
  lora_alpha            16
  dirichlet_alpha       0.5
  weighting             uniform | samples (default uniform)
  precision_bits        16 | 32 | 64 (default 32)
  stack_reinit          true
  threads               1
  solver: steps 100, learning_rate 0.01, beta1 0.9, beta2 0.999,
          epsilon 1e-8, init_scale (default 1/U: starts at FedIT),
          gauge 1 (start from (gauge p, q / gauge))
  compression: mode NONE | HALF_PRECISION | QUANT_UNIFORM | SPARSIFY_TOPK,
               bits 8, keep_fraction 1.0
  strategies            [FEDIT, FLORA_NA]
  seeds                 [1]
  output_dir            runs
  target_fraction       unset (e.g. 0.95 reports rounds-to-target)
  checkpoint            false
  sweep: dirichlet_alpha [..], clients [..]
)";
}

namespace {

RunPlan make_plan(const ExperimentConfig& config, Strategy strategy,
                  std::uint64_t seed, const std::string& sweep_point) {
  RunPlan plan;
  plan.sim = config.base;
  plan.sim.strategy = strategy;
  plan.sim.seed = seed;
  plan.sweep_point = sweep_point;
  std::filesystem::path dir = std::string(to_string(strategy));
  dir /= fmt::format("seed-{}", seed);
  plan.subdir = sweep_point.empty() ? dir : std::filesystem::path(sweep_point) / dir;
  return plan;
}

}  // namespace

std::vector<RunPlan> run_plans(const ExperimentConfig& config) {
  std::vector<RunPlan> plans;
  for (Strategy strategy : config.strategies) {
    for (std::uint64_t seed : config.seeds) {
      plans.push_back(make_plan(config, strategy, seed, ""));
    }
  }
  return plans;
}

std::vector<RunPlan> sweep_plans(const ExperimentConfig& config) {
  std::vector<double> alphas = config.sweep.dirichlet_alphas;
  std::vector<std::size_t> clients = config.sweep.clients;
  if (alphas.empty()) alphas.push_back(config.base.dirichlet_alpha);
  if (clients.empty()) clients.push_back(config.base.clients);
  std::vector<RunPlan> plans;
  for (double alpha : alphas) {
    for (std::size_t u : clients) {
      const std::string point = fmt::format("alpha-{}_clients-{}", alpha, u);
      for (Strategy strategy : config.strategies) {
        for (std::uint64_t seed : config.seeds) {
          RunPlan plan = make_plan(config, strategy, seed, point);
          plan.sim.dirichlet_alpha = alpha;
          plan.sim.clients = u;
          plans.push_back(std::move(plan));
        }
      }
    }
  }
  return plans;
}

}  // namespace fedlora
