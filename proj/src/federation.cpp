#include "fedsplit/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "fedsplit/errors.hpp"
#include "fedsplit/rng.hpp"

namespace fedsplit {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace

ModelParams aggregate(std::span<const WeightedModel> updates) {
  if (updates.empty()) {
    throw InvalidArgument("aggregate: no updates");
  }
  std::vector<const WeightedModel*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.size <= 0) {
      throw InvalidArgument("aggregate: client sizes must be positive");
    }
    if (!u.params.get().same_shape(updates.front().params.get())) {
      throw ShapeMismatch("aggregate: client " + std::to_string(u.client_id) +
                          " has a different parameter shape");
    }
    ordered.push_back(&u);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const WeightedModel* a, const WeightedModel* b) {
                     return a->client_id < b->client_id;
                   });
  double total = 0.0;
  for (const auto* u : ordered) {
    total += static_cast<double>(u->size);
  }
  ModelParams out = ModelParams::zeros_like(ordered.front()->params.get());
  for (const auto* u : ordered) {
    out.add_scaled(u->params.get(), static_cast<double>(u->size) / total);
  }
  return out;
}

double signal_value(UpdateSignal signal, const ClientUpdate& update) {
  switch (signal) {
    case UpdateSignal::gradient:
      return update.result.update.magnitude;
    case UpdateSignal::loss:
      return update.result.avg_loss;
    case UpdateSignal::bias:
      return update.result.update.bias_norm();
    case UpdateSignal::weight:
      return update.result.update.weight_norm();
  }
  return update.result.update.magnitude;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) {
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      guarded(i);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          guarded(i);
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

Federation::Federation(ExperimentConfig cfg, std::vector<ClientDataset> clients, std::uint64_t seed)
    : cfg_(std::move(cfg)), clients_(std::move(clients)), seed_(seed) {
  if (auto problems = validate(cfg_); !problems.empty()) {
    throw ValidationError(std::move(problems));
  }
  if (static_cast<int>(clients_.size()) != cfg_.data.n_clients) {
    throw InvalidArgument("Federation: client count does not match data.n_clients");
  }
  for (std::size_t k = 0; k < clients_.size(); ++k) {
    if (clients_[k].client_id != static_cast<int>(k)) {
      throw InvalidArgument("Federation: client ids must be 0..n-1 in order");
    }
    all_ids_.push_back(clients_[k].client_id);
  }
}

double Federation::learning_rate_for_round(int round) const {
  const int steps = round / std::max(1, cfg_.train.decay_every);
  return cfg_.train.learning_rate * std::pow(cfg_.train.lr_decay, steps);
}

std::vector<ClientUpdate> Federation::train_clients(const ModelParams& global,
                                                    std::span<const int> ids, int round,
                                                    int iteration) const {
  std::vector<int> ordered(ids.begin(), ids.end());
  std::sort(ordered.begin(), ordered.end());
  std::vector<ClientUpdate> out(ordered.size());
  TrainConfig base = cfg_.train;
  base.mu = cfg_.effective_mu();
  base.learning_rate = learning_rate_for_round(round);
  parallel_for(ordered.size(), cfg_.workers, [&](std::size_t i) {
    const int id = ordered[i];
    const auto& client = clients_.at(static_cast<std::size_t>(id));
    TrainConfig tc = base;
    tc.seed = derive_seed(seed_, {stream::kTrain, static_cast<std::uint64_t>(round),
                                  static_cast<std::uint64_t>(iteration),
                                  static_cast<std::uint64_t>(id)});
    try {
      out[i] = ClientUpdate{id, client.size(), local_train(global, client.train, tc)};
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(e.step(), round, iteration, id);
    }
  });
  return out;
}

namespace {

ModelParams aggregate_updates(const std::vector<ClientUpdate>& updates) {
  std::vector<WeightedModel> weighted;
  weighted.reserve(updates.size());
  for (const auto& u : updates) {
    weighted.push_back({u.client_id, std::cref(u.result.local), u.size});
  }
  ModelParams out = aggregate(weighted);
  if (!out.all_finite()) {
    throw NonFiniteInput("aggregate: global model became non-finite");
  }
  return out;
}

double mean_loss(const std::vector<ClientUpdate>& updates) {
  double s = 0.0;
  for (const auto& u : updates) {
    s += u.result.avg_loss;
  }
  return updates.empty() ? 0.0 : s / static_cast<double>(updates.size());
}

}  // namespace

IterationOutcome Federation::run_iteration(const RoundState& state) {
  if (state.hard_set.empty()) {
    throw InvalidArgument("run_iteration: empty hard set");
  }
  IterationRecord record;
  record.round = state.round;
  record.iteration = state.iteration;

  auto t0 = Clock::now();
  const auto updates = train_clients(state.global, state.hard_set, state.round, state.iteration);
  IterationOutcome outcome;
  outcome.next.global = aggregate_updates(updates);
  record.train_ms = elapsed_ms(t0);
  record.mean_loss = mean_loss(updates);
  for (const auto& u : updates) {
    record.trained_ids.push_back(u.client_id);
  }

  outcome.next.round = state.round;
  outcome.next.iteration = state.iteration + 1;
  outcome.next.sampled = state.sampled;
  outcome.next.history = state.history;

  bool split_terminal = true;
  if (updates.size() >= 2) {
    std::vector<ClientSummary> summaries;
    summaries.reserve(updates.size());
    for (const auto& u : updates) {
      summaries.push_back(
          {u.client_id, signal_value(cfg_.update_signal, u), u.size, u.result.avg_loss});
    }
    t0 = Clock::now();
    SplitDecision decision = split_clients(summaries, cfg_.split_options());
    record.split_ms = elapsed_ms(t0);
    split_terminal = decision.terminal;
    outcome.next.hard_set = decision.hard_ids;
    record.split = decision;
    outcome.next.history.push_back(std::move(decision));
  }

  const auto next_size = outcome.next.hard_set.size();
  outcome.terminated = split_terminal || static_cast<int>(next_size) < cfg_.eta ||
                       outcome.next.iteration >= cfg_.max_iterations;
  record.next_hard_size = next_size;
  record.terminated = outcome.terminated;

  log_.total_client_trainings += static_cast<std::int64_t>(updates.size());
  log_.iterations.push_back(std::move(record));
  return outcome;
}

std::vector<ClientSummary> Federation::probe_losses(const ModelParams& global) const {
  std::vector<ClientSummary> out(clients_.size());
  parallel_for(clients_.size(), cfg_.workers, [&](std::size_t k) {
    out[k] = {clients_[k].client_id, 0.0, clients_[k].size(),
              dataset_loss(global, clients_[k].train)};
  });
  return out;
}

std::vector<int> Federation::select_baseline(const RoundState& state) const {
  const auto k = static_cast<std::size_t>(cfg_.clients_per_round);
  const std::uint64_t seed =
      derive_seed(seed_, {stream::kBaseline, static_cast<std::uint64_t>(state.round)});
  switch (cfg_.strategy) {
    case Strategy::random:
    case Strategy::terraform:
      return state.sampled;
    case Strategy::poc:
      return poc_select(probe_losses(state.global), cfg_.resolved_poc_d(), cfg_.resolved_poc_m(),
                        seed);
    case Strategy::oort:
      return oort_select(probe_losses(state.global), k, cfg_.oort_epsilon, seed);
  }
  return state.sampled;
}

RoundState Federation::run_round(RoundState state) {
  const std::size_t first_record = log_.iterations.size();
  state.iteration = 0;
  state.history.clear();
  state.sampled = random_select(
      all_ids_, static_cast<std::size_t>(cfg_.clients_per_round),
      derive_seed(seed_, {stream::kSample, static_cast<std::uint64_t>(state.round)}));

  if (cfg_.strategy != Strategy::terraform) {
    // Baselines: one selection, one training pass.
    const auto selected = select_baseline(state);
    IterationRecord record;
    record.round = state.round;
    const auto t0 = Clock::now();
    const auto updates = train_clients(state.global, selected, state.round, 0);
    state.global = aggregate_updates(updates);
    record.train_ms = elapsed_ms(t0);
    record.mean_loss = mean_loss(updates);
    for (const auto& u : updates) {
      record.trained_ids.push_back(u.client_id);
    }
    record.terminated = true;
    log_.total_client_trainings += static_cast<std::int64_t>(updates.size());
    log_.iterations.push_back(std::move(record));
    state.hard_set.clear();
    state.iteration = 1;
  } else {
    state.hard_set = state.sampled;
    for (;;) {
      auto outcome = run_iteration(state);
      state = std::move(outcome.next);
      if (outcome.terminated) {
        break;
      }
    }
  }
  finish_round(state.round, state.global, first_record);
  RoundState next;
  next.round = state.round + 1;
  next.global = std::move(state.global);
  return next;
}

void Federation::finish_round(int round, const ModelParams& global, std::size_t first_record) {
  RoundMetrics m;
  m.round = round;
  std::vector<int> participants;
  double loss_sum = 0.0;
  for (std::size_t i = first_record; i < log_.iterations.size(); ++i) {
    const auto& rec = log_.iterations[i];
    ++m.iterations;
    m.clients_trained += static_cast<int>(rec.trained_ids.size());
    loss_sum += rec.mean_loss * static_cast<double>(rec.trained_ids.size());
    m.train_ms += rec.train_ms;
    m.split_ms += rec.split_ms;
    participants.insert(participants.end(), rec.trained_ids.begin(), rec.trained_ids.end());
  }
  m.mean_loss = m.clients_trained > 0 ? loss_sum / m.clients_trained : 0.0;

  std::vector<const LabeledDataset*> tests;
  if (cfg_.eval_participants_only) {
    std::sort(participants.begin(), participants.end());
    participants.erase(std::unique(participants.begin(), participants.end()), participants.end());
    for (int id : participants) {
      tests.push_back(&clients_[static_cast<std::size_t>(id)].test);
    }
  } else {
    for (const auto& c : clients_) {
      tests.push_back(&c.test);
    }
  }
  m.accuracy = evaluate(global, tests);
  log_.rounds.push_back(m);
}

ExperimentResult Federation::run(const ModelParams& initial, const RoundCallback& on_round) {
  const auto t0 = Clock::now();
  RoundState state;
  state.global = initial;
  for (int r = 0; r < cfg_.rounds; ++r) {
    state.round = r;
    state = run_round(std::move(state));
    if (on_round) {
      on_round(r, state.global);
    }
  }
  log_.total_ms = elapsed_ms(t0);
  return {log_, state.global};
}

std::vector<ClientDataset> build_clients(const DataConfig& data, std::uint64_t seed) {
  const auto pool =
      generate_synthetic_dataset(data.n_classes, data.dim, data.n_samples, data.class_separation,
                                 derive_seed(seed, {stream::kData}), data.noise_std);
  PartitionPlan plan;
  plan.n_clients = data.n_clients;
  plan.alpha_groups = data.alpha_list;
  plan.seed = derive_seed(seed, {stream::kPartition});
  plan.train_fraction = data.train_fraction;
  return dirichlet_partition(pool, plan);
}

ModelParams initial_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  return ModelParams::random_init({cfg.data.dim, cfg.hidden_units, cfg.data.n_classes},
                                  derive_seed(seed, {stream::kInit}));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                const Federation::RoundCallback& on_round) {
  if (auto problems = validate(cfg); !problems.empty()) {
    throw ValidationError(std::move(problems));
  }
  Federation federation(cfg, build_clients(cfg.data, seed), seed);
  return federation.run(initial_model(cfg, seed), on_round);
}

}  // namespace fedsplit
