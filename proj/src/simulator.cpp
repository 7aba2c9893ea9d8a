#include "fedlora/simulator.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"
#include "parallel.hpp"

#include "json.hpp"

#include <fmt/format.h>

#include <fstream>

namespace fedlora {

void SimulationConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorCode::kValidationError, fmt::format("{}: {}", field, msg));
  };
  task.validate();
  if (clients < 1) fail("clients", "must be >= 1");
  if (rounds < 1) fail("rounds", "must be >= 1");
  if (local_steps ? *local_steps < 1 : epochs < 1) {
    fail(local_steps ? "local_steps" : "epochs", "must be >= 1");
  }
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(learning_rate >= 0.0)) fail("learning_rate", "must be >= 0");
  const Index head = task.output_dim / task.layers;
  if (rank < 1 || rank > std::min(head, task.input_dim)) {
    fail("rank", fmt::format("must lie in [1, {}]", std::min(head, task.input_dim)));
  }
  if (!(lora_alpha > 0.0)) fail("lora_alpha", "must be positive");
  if (!(dirichlet_alpha > 0.0)) fail("dirichlet_alpha", "must be positive");
  solver.validate();
  compression.validate();
  bytes_per_entry(precision_bits);
  if (threads < 1) fail("threads", "must be >= 1");
}

namespace {

bool same_adapters(const ClientAdapters& lhs, const ClientAdapters& rhs) {
  if (lhs.size() != rhs.size()) return false;
  for (const auto& [id, pair] : lhs) {
    auto it = rhs.find(id);
    if (it == rhs.end()) return false;
    const LoraPair& other = it->second;
    if (pair.alpha != other.alpha || pair.a.rows() != other.a.rows() ||
        pair.a.cols() != other.a.cols() || pair.b.rows() != other.b.rows() ||
        pair.b.cols() != other.b.cols() || pair.a != other.a ||
        pair.b != other.b) {
      return false;
    }
  }
  return true;
}


}  // namespace

Evaluation evaluate(const FrozenModel& global_frozen,
                    std::span<const ClientAdapters> round_start,
                    const FrozenModel& local_frozen,
                    std::span<const ClientAdapters> end_of_round,
                    std::span<const Dataset> local_tests,
                    const Dataset& global_test) {
  if (global_test.size() == 0) {
    throw Error(ErrorCode::kEmptyTestSet, "global test set is empty");
  }
  if (round_start.empty() || round_start.size() != end_of_round.size() ||
      end_of_round.size() != local_tests.size()) {
    throw Error(ErrorCode::kShapeMismatch, "evaluate: client counts differ");
  }
  Evaluation eval;
  const DenseMatrix base = global_frozen.base_outputs(global_test.x);
  double previous = 0.0;
  for (std::size_t u = 0; u < round_start.size(); ++u) {
    // Strategies that broadcast one model give every client the same
    // adapters; reuse the score instead of recomputing it.
    if (u == 0 || !same_adapters(round_start[u], round_start[u - 1])) {
      previous = task_metric(
          global_frozen.kind,
          global_frozen.outputs(round_start[u], global_test.x, base),
          global_test);
    }
    eval.global_metric += previous;
  }
  eval.global_metric /= static_cast<double>(round_start.size());

  for (std::size_t u = 0; u < end_of_round.size(); ++u) {
    const Dataset& test = local_tests[u];
    if (test.size() == 0) {
      throw Error(ErrorCode::kEmptyTestSet,
                  fmt::format("client {} has an empty local test set", u));
    }
    const DenseMatrix local_base = local_frozen.base_outputs(test.x);
    eval.mean_local_metric += task_metric(
        local_frozen.kind,
        local_frozen.outputs(end_of_round[u], test.x, local_base), test);
  }
  eval.mean_local_metric /= static_cast<double>(end_of_round.size());
  eval.gen_gap = eval.mean_local_metric - eval.global_metric;
  return eval;
}

Simulation::Simulation(SimulationConfig config) : config_(std::move(config)) {
  config_.validate();
  task_ = generate_task(config_.task, config_.seed);
  partition_ = dirichlet_partition(task_.train.cluster, config_.clients,
                                   config_.dirichlet_alpha, config_.seed, 2);
  const auto splits = split_train_test(
      partition_, config_.task.local_test_fraction, config_.seed);
  for (const auto& split : splits) {
    train_.push_back(subset(task_.train, split.train));
    test_.push_back(subset(task_.train, split.test));
  }

  state_.model = FrozenModel::from_task(task_.task, config_.task.layers);
  ClientAdapters init;
  for (std::size_t l = 0; l < state_.model.layers.size(); ++l) {
    const DenseMatrix& w0 = state_.model.layers[l].w0;
    LoraPair pair =
        init_lora(w0.rows(), w0.cols(), config_.rank, config_.lora_alpha,
                  derive_seed(config_.seed, StreamTag::kLoraInit, {l}));
    state_.frozen_a[state_.model.layer_ids[l]] = pair.a;
    init.emplace(state_.model.layer_ids[l], std::move(pair));
  }
  state_.client_start.assign(config_.clients, init);
}

std::vector<LocalTrainResult> Simulation::train_clients() const {
  std::vector<LocalTrainResult> results(config_.clients);
  LocalTrainConfig base;
  base.epochs = config_.epochs;
  base.steps = config_.local_steps;
  base.batch_size = config_.batch_size;
  base.learning_rate = config_.learning_rate;
  base.constraint = config_.strategy == Strategy::kFfa
                        ? LocalConstraint::kFreezeA
                        : config_.strategy == Strategy::kFedSa
                              ? LocalConstraint::kKeepLocalB
                              : LocalConstraint::kNone;
  detail::parallel_for(config_.clients, config_.threads, [&](std::size_t u) {
    LocalTrainConfig local = base;
    local.seed = derive_seed(config_.seed, StreamTag::kLocalTrain,
                             {u, static_cast<std::uint64_t>(state_.round)});
    results[u] = local_train(state_.model, train_[u], state_.client_start[u],
                             local, fmt::format("client{:03d}", u));
  });
  return results;
}

RoundLog Simulation::run_round() {
  const int round = state_.round;
  const std::size_t clients = config_.clients;
  const Strategy strategy = config_.strategy;

  std::vector<LocalTrainResult> trained = train_clients();
  std::vector<ClientUpdate> updates;
  std::vector<ClientAdapters> end_of_round;
  double loss_sum = 0.0;
  for (auto& t : trained) {
    loss_sum += t.mean_loss;
    end_of_round.push_back(t.update.adapters);
    updates.push_back(std::move(t.update));
  }
  const ClientWeights weights = config_.weighting == Weighting::kSamples
                                    ? ClientWeights::by_samples(updates)
                                    : ClientWeights::uniform(clients);

  AggregationOptions options;
  options.solver = config_.solver;
  options.frozen_a = state_.frozen_a;
  const AggregateResult agg = aggregate(strategy, updates, weights, options);

  RoundLog log;
  log.round = round + 1;
  log.strategy = strategy;
  log.train_loss = loss_sum / static_cast<double>(clients);
  log.divergence = divergence(agg);
  log.fedit_divergence =
      strategy == Strategy::kFedIt
          ? log.divergence.aggregate
          : divergence(aggregate_fedit(updates, weights)).aggregate;
  if (strategy == Strategy::kFloraNa) {
    double init = 0.0;
    double fin = 0.0;
    for (const auto& [id, layer] : agg.layers) {
      init += layer.coefficients->initial_objective;
      fin += layer.coefficients->final_objective;
    }
    log.na_initial_objective = init;
    log.na_final_objective = fin;
  }

  // Server -> client payloads pass through the configured compression.
  const std::uint64_t width = bytes_per_entry(config_.precision_bits);
  std::uint64_t encoded_down = 0;
  auto transmit = [&](const DenseMatrix& m) -> DenseMatrix {
    if (config_.compression.mode == CompressionMode::kNone) {
      encoded_down += static_cast<std::uint64_t>(m.size()) * width;
      return m;
    }
    const EncodedMatrix enc = compress(m, config_.compression);
    encoded_down += enc.bytes;
    return enc.decode();
  };

  const FrozenModel before = state_.model;
  std::vector<ClientAdapters> next(clients);
  for (std::size_t l = 0; l < state_.model.layers.size(); ++l) {
    const std::string& id = state_.model.layer_ids[l];
    const LayerAggregate& layer = agg.layers.at(id);
    FrozenLayer& frozen = state_.model.layers[l];
    const LoraPair& ref = updates.front().adapters.at(id);
    auto set_all = [&](const DenseMatrix& a, const DenseMatrix& b) {
      for (auto& n : next) n[id] = LoraPair{a, b, ref.alpha};
    };
    auto mean_a = [&] {
      DenseMatrix a = DenseMatrix::Zero(ref.a.rows(), ref.a.cols());
      for (std::size_t u = 0; u < clients; ++u) {
        a += weights.values[u] * updates[u].adapters.at(id).a;
      }
      return a;
    };
    const DenseMatrix zero_b = DenseMatrix::Zero(ref.b.rows(), ref.b.cols());

    switch (strategy) {
      case Strategy::kIdeal: {
        // Merge and restart: keeping A while B restarts at zero would lock
        // every later round into A's row space and let A grow unchecked.
        frozen.residual += transmit(layer.ideal_delta);
        const LoraPair fresh = init_lora(
            ref.out_dim(), ref.in_dim(), ref.rank(), ref.alpha,
            derive_seed(config_.seed, StreamTag::kReinit,
                        {static_cast<std::uint64_t>(round), l}));
        set_all(transmit(fresh.a), zero_b);
        break;
      }
      case Strategy::kFedIt:
      case Strategy::kFloraNa: {
        const DenseMatrix a = transmit(*layer.a_bar);
        set_all(a, transmit(*layer.b_bar));
        break;
      }
      case Strategy::kFfa:
        set_all(state_.frozen_a.at(id), transmit(*layer.b_bar));
        break;
      case Strategy::kFedSa: {
        const DenseMatrix a = transmit(*layer.a_bar);
        for (std::size_t u = 0; u < clients; ++u) {
          next[u][id] = LoraPair{a, updates[u].adapters.at(id).b, ref.alpha};
        }
        break;
      }
      case Strategy::kStack: {
        const DenseMatrix a = transmit(*layer.a_bar);
        const DenseMatrix b = transmit(*layer.b_bar);
        frozen.residual += layer.scale * (b * a);
        if (config_.stack_reinit) {
          const LoraPair fresh = init_lora(
              ref.out_dim(), ref.in_dim(), ref.rank(), ref.alpha,
              derive_seed(config_.seed, StreamTag::kReinit,
                          {static_cast<std::uint64_t>(round), l}));
          set_all(fresh.a, zero_b);
        } else {
          set_all(mean_a(), zero_b);
        }
        break;
      }
      case Strategy::kFedEx: {
        const DenseMatrix a = transmit(*layer.a_bar);
        const DenseMatrix b = transmit(*layer.b_bar);
        frozen.residual += transmit(*layer.residual);
        set_all(a, b);
        break;
      }
    }
  }

  std::vector<LayerShape> shapes;
  for (const auto& layer : before.layers) {
    shapes.push_back({layer.w0.rows(), layer.w0.cols(), config_.rank});
  }
  log.comm = comm_account(strategy, shapes, clients, config_.precision_bits);
  if (config_.compression.mode != CompressionMode::kNone) {
    log.comm.down_bytes = encoded_down;
  }
  for (std::size_t u = 0; u < clients; ++u) {
    state_.ledger.record(log.round, u, Direction::kUp, log.comm.up_entries,
                         log.comm.up_bytes);
    state_.ledger.record(log.round, u, Direction::kDown, log.comm.down_entries,
                         log.comm.down_bytes);
  }
  log.round_up_bytes = log.comm.up_bytes * clients;
  log.round_down_bytes = log.comm.down_bytes * clients;

  state_.client_start = std::move(next);
  const Evaluation eval = evaluate(state_.model, state_.client_start, before,
                                   end_of_round, test_, task_.global_test);
  log.global_metric = eval.global_metric;
  log.mean_local_metric = eval.mean_local_metric;
  log.gen_gap = eval.gen_gap;

  state_.round = round + 1;
  return log;
}

void Simulation::save_checkpoint(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["format"] = "fedlora-checkpoint-v1";
  j["strategy"] = std::string(to_string(config_.strategy));
  j["seed"] = config_.seed;
  j["clients"] = config_.clients;
  j["round"] = state_.round;
  j["rng_counter"] = state_.round;
  for (std::size_t l = 0; l < state_.model.layers.size(); ++l) {
    j["residuals"][state_.model.layer_ids[l]] =
        dump_matrix(state_.model.layers[l].residual);
  }
  for (const auto& [id, a] : state_.frozen_a) j["frozen_a"][id] = dump_matrix(a);
  j["client_start"] = nlohmann::ordered_json::array();
  for (const auto& adapters : state_.client_start) {
    nlohmann::ordered_json c;
    for (const auto& [id, pair] : adapters) {
      c[id] = {{"alpha", pair.alpha},
               {"a", dump_matrix(pair.a)},
               {"b", dump_matrix(pair.b)}};
    }
    j["client_start"].push_back(c);
  }
  j["ledger"] = nlohmann::ordered_json::array();
  for (const auto& row : state_.ledger.rows()) {
    j["ledger"].push_back({row.round, row.client,
                           row.direction == Direction::kUp ? "up" : "down",
                           row.entries, row.bytes});
  }
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::kIo,
                fmt::format("cannot write checkpoint {}", path.string()));
  }
  out << j.dump() << '\n';
}

Simulation Simulation::resume(SimulationConfig config,
                              const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo,
                fmt::format("cannot read checkpoint {}", path.string()));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  Simulation sim(std::move(config));
  if (j.at("strategy").get<std::string>() !=
          to_string(sim.config_.strategy) ||
      j.at("seed").get<std::uint64_t>() != sim.config_.seed ||
      j.at("clients").get<std::size_t>() != sim.config_.clients) {
    throw Error(ErrorCode::kValidationError,
                "checkpoint does not belong to this configuration");
  }
  SimulationState& st = sim.state_;
  st.round = j.at("round").get<int>();
  for (std::size_t l = 0; l < st.model.layers.size(); ++l) {
    st.model.layers[l].residual = parse_matrix(
        j.at("residuals").at(st.model.layer_ids[l]).get<std::string>());
  }
  st.frozen_a.clear();
  for (const auto& [id, text] : j.at("frozen_a").items()) {
    st.frozen_a[id] = parse_matrix(text.get<std::string>());
  }
  st.client_start.clear();
  for (const auto& c : j.at("client_start")) {
    ClientAdapters adapters;
    for (const auto& [id, p] : c.items()) {
      adapters[id] = LoraPair{parse_matrix(p.at("a").get<std::string>()),
                              parse_matrix(p.at("b").get<std::string>()),
                              p.at("alpha").get<double>()};
    }
    st.client_start.push_back(std::move(adapters));
  }
  st.ledger = CommLedger{};
  for (const auto& row : j.at("ledger")) {
    st.ledger.record(row.at(0).get<int>(), row.at(1).get<std::size_t>(),
                     row.at(2).get<std::string>() == "up" ? Direction::kUp
                                                          : Direction::kDown,
                     row.at(3).get<std::uint64_t>(),
                     row.at(4).get<std::uint64_t>());
  }
  return sim;
}

}  // namespace fedlora
