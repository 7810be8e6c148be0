#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedsplit/config.hpp"
#include "fedsplit/datagen.hpp"
#include "fedsplit/metrics.hpp"
#include "fedsplit/model.hpp"
#include "fedsplit/selection.hpp"

namespace fedsplit {

struct WeightedModel {
  int client_id = 0;
  std::reference_wrapper<const ModelParams> params;
  std::int64_t size = 0;
};

/// Size-weighted average, accumulated in ascending client-id order.
ModelParams aggregate(std::span<const WeightedModel> updates);

/// Server state inside a round.
struct RoundState {
  int round = 0;
  int iteration = 0;
  ModelParams global;
  /// Clients of the round's initial sample; hard_set is always a subset.
  std::vector<int> sampled;
  std::vector<int> hard_set;
  std::vector<SplitDecision> history;
};

struct IterationOutcome {
  RoundState next;
  bool terminated = false;
};

struct ExperimentResult {
  MetricsLog log;
  ModelParams final_model;
};

/// Local-training outcome for one client.
struct ClientUpdate {
  int client_id = 0;
  std::int64_t size = 0;
  LocalTrainResult result;
};

/// Magnitude used to rank a client under the given signal.
double signal_value(UpdateSignal signal, const ClientUpdate& update);

/// Runs fn(0..n-1) on up to `workers` threads. Exceptions are rethrown after
/// the join; the lowest failing index wins.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

class Federation {
 public:
  using RoundCallback = std::function<void(int round, const ModelParams& global)>;

  Federation(ExperimentConfig cfg, std::vector<ClientDataset> clients, std::uint64_t seed);

  const ExperimentConfig& config() const { return cfg_; }
  std::span<const ClientDataset> clients() const { return clients_; }
  const MetricsLog& log() const { return log_; }

  /// Learning rate for round r after the server-side step decay.
  double learning_rate_for_round(int round) const;

  /// Trains `ids` from `global`, in parallel, results ordered by client id.
  std::vector<ClientUpdate> train_clients(const ModelParams& global, std::span<const int> ids,
                                          int round, int iteration) const;

  /// One splitting iteration: train the hard set, aggregate, split.
  IterationOutcome run_iteration(const RoundState& state);

  /// A whole round, from sampling to the model carried into the next round.
  RoundState run_round(RoundState state);

  ExperimentResult run(const ModelParams& initial, const RoundCallback& on_round = {});

 private:
  std::vector<int> select_baseline(const RoundState& state) const;
  std::vector<ClientSummary> probe_losses(const ModelParams& global) const;
  void finish_round(int round, const ModelParams& global, std::size_t first_record);

  ExperimentConfig cfg_;
  std::vector<ClientDataset> clients_;
  std::uint64_t seed_;
  std::vector<int> all_ids_;
  MetricsLog log_;
};

/// Synthetic pool and Dirichlet partition for `seed`. Depends only on the
/// data config and seed, never on the strategy.
std::vector<ClientDataset> build_clients(const DataConfig& data, std::uint64_t seed);

ModelParams initial_model(const ExperimentConfig& cfg, std::uint64_t seed);

/// Builds clients and the initial model for `seed`, then runs every round.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                const Federation::RoundCallback& on_round = {});

}  // namespace fedsplit
