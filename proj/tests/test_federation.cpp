#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <numeric>
#include <stdexcept>

#include "fedsplit/errors.hpp"
#include "fedsplit/federation.hpp"
#include "fedsplit/rng.hpp"

using namespace fedsplit;

namespace {

ModelParams scalar_model(double v) {
  DenseLayer l{Eigen::MatrixXd::Constant(1, 1, v), Eigen::VectorXd::Constant(1, v)};
  return ModelParams({l});
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.rounds = 4;
  cfg.max_iterations = 4;
  cfg.clients_per_round = 8;
  cfg.eta = 2;
  cfg.data.n_clients = 16;
  cfg.data.alpha_list = {0.01, 0.5};
  cfg.data.n_classes = 4;
  cfg.data.dim = 5;
  cfg.data.n_samples = 1600;
  cfg.train.learning_rate = 0.05;
  cfg.train.batch_size = 32;
  cfg.train.epochs = 1;
  cfg.seeds = {1};
  return cfg;
}

bool same_log(const MetricsLog& a, const MetricsLog& b) {
  if (a.rounds.size() != b.rounds.size() || a.iterations.size() != b.iterations.size() ||
      a.total_client_trainings != b.total_client_trainings) {
    return false;
  }
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    const auto& x = a.rounds[i];
    const auto& y = b.rounds[i];
    if (x.accuracy != y.accuracy || x.mean_loss != y.mean_loss || x.iterations != y.iterations ||
        x.clients_trained != y.clients_trained) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    const auto& x = a.iterations[i];
    const auto& y = b.iterations[i];
    if (x.trained_ids != y.trained_ids || x.mean_loss != y.mean_loss ||
        x.split.has_value() != y.split.has_value()) {
      return false;
    }
    if (x.split && (x.split->sorted_magnitudes != y.split->sorted_magnitudes ||
                    x.split->tau_split != y.split->tau_split)) {
      return false;
    }
  }
  return true;
}

// Eight clients with identical sizes. Clients 0-3 hold points the initial
// model already classifies confidently; clients 4-7 hold points it gets
// badly wrong, so their final-layer updates are far larger.
std::vector<ClientDataset> engineered_clients() {
  std::vector<ClientDataset> out;
  for (int k = 0; k < 8; ++k) {
    ClientDataset c;
    c.client_id = k;
    c.alpha = 1.0;
    c.train.n_classes = 2;
    c.train.features.resize(10, 2);
    for (int i = 0; i < 10; ++i) {
      c.train.features(i, 0) = k < 4 ? 1.0 : -1.0;
      c.train.features(i, 1) = 0.1 * i;
    }
    c.train.labels.assign(10, k < 4 ? 0 : 1);
    c.test = c.train;
    out.push_back(std::move(c));
  }
  return out;
}

ModelParams confident_class0() {
  DenseLayer l{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)};
  l.bias << 6.0, -6.0;
  return ModelParams({l});
}

}  // namespace

TEST_CASE("aggregate examples") {
  const auto m = scalar_model(2.5);
  std::vector<WeightedModel> same{{0, std::cref(m), 3}, {1, std::cref(m), 9}};
  CHECK(aggregate(same) == m);

  const auto zero = scalar_model(0.0);
  const auto one = scalar_model(1.0);
  std::vector<WeightedModel> two{{1, std::cref(one), 3}, {0, std::cref(zero), 1}};
  CHECK(aggregate(two).final_layer().weight(0, 0) == doctest::Approx(0.75));

  std::vector<WeightedModel> single{{4, std::cref(one), 17}};
  CHECK(aggregate(single) == one);

  CHECK_THROWS_AS(aggregate(std::vector<WeightedModel>{}), InvalidArgument);
  const ModelParams other({DenseLayer{Eigen::MatrixXd::Zero(2, 1), Eigen::VectorXd::Zero(2)}});
  std::vector<WeightedModel> mixed{{0, std::cref(one), 1}, {1, std::cref(other), 1}};
  CHECK_THROWS_AS(aggregate(mixed), ShapeMismatch);
}

TEST_CASE("aggregation coefficients sum to one") {
  const auto one = scalar_model(1.0);
  std::vector<WeightedModel> many;
  for (int k = 0; k < 37; ++k) {
    many.push_back({k, std::cref(one), 1 + (k * 7919) % 1000});
  }
  CHECK(std::abs(aggregate(many).final_layer().weight(0, 0) - 1.0) < 1e-12);
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  std::atomic<int> ran{0};
  try {
    parallel_for(20, 4, [&](std::size_t i) {
      ++ran;
      if (i == 13 || i == 5) {
        throw std::runtime_error(std::to_string(i));
      }
    });
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "5");
  }
  CHECK(ran == 20);
}

TEST_CASE("engineered magnitudes put the four poorly-fit clients in the hard set") {
  ExperimentConfig cfg = small_config();
  cfg.data.n_clients = 8;
  cfg.clients_per_round = 8;
  cfg.eta = 2;
  cfg.train.batch_size = 10;
  cfg.train.learning_rate = 0.5;
  Federation fed(cfg, engineered_clients(), 3);

  RoundState state;
  state.global = confident_class0();
  state.sampled = {0, 1, 2, 3, 4, 5, 6, 7};
  state.hard_set = state.sampled;
  const auto out = fed.run_iteration(state);
  auto hard = out.next.hard_set;
  std::sort(hard.begin(), hard.end());
  CHECK(hard == std::vector<int>{4, 5, 6, 7});
  CHECK_FALSE(out.terminated);
  REQUIRE(fed.log().iterations.size() == 1);
  CHECK(fed.log().iterations[0].split->tau_split == 4);
}

TEST_CASE("eta above K stops after one iteration") {
  ExperimentConfig cfg = small_config();
  cfg.eta = cfg.clients_per_round + 1;
  Federation fed(cfg, build_clients(cfg.data, 1), 1);
  RoundState state;
  state.global = initial_model(cfg, 1);
  state = fed.run_round(std::move(state));
  CHECK(fed.log().iterations.size() == 1);
  CHECK(fed.log().rounds.at(0).iterations == 1);
}

TEST_CASE("T = 1 and eta > K reproduce Random's participants") {
  ExperimentConfig cfg = small_config();
  cfg.max_iterations = 1;
  cfg.eta = cfg.clients_per_round + 1;
  cfg.strategy = Strategy::terraform;
  const auto split = run_experiment(cfg, 5);
  cfg.strategy = Strategy::random;
  const auto random = run_experiment(cfg, 5);
  REQUIRE(split.log.iterations.size() == random.log.iterations.size());
  for (std::size_t i = 0; i < split.log.iterations.size(); ++i) {
    CHECK(split.log.iterations[i].trained_ids == random.log.iterations[i].trained_ids);
  }
  CHECK(split.final_model == random.final_model);
}

TEST_CASE("one random round is one plain FedAvg step") {
  ExperimentConfig cfg = small_config();
  cfg.rounds = 1;
  cfg.max_iterations = 1;
  cfg.strategy = Strategy::random;
  const std::uint64_t seed = 8;
  const auto clients = build_clients(cfg.data, seed);
  const auto init = initial_model(cfg, seed);

  Federation fed(cfg, clients, seed);
  const auto result = fed.run(init);

  std::vector<int> ids(static_cast<std::size_t>(cfg.data.n_clients));
  std::iota(ids.begin(), ids.end(), 0);
  const auto sampled = random_select(ids, static_cast<std::size_t>(cfg.clients_per_round),
                                     derive_seed(seed, {stream::kSample, 0}));
  std::vector<ClientUpdate> updates;
  TrainConfig tc = cfg.train;
  for (int id : sampled) {
    tc.seed = derive_seed(seed, {stream::kTrain, 0, 0, static_cast<std::uint64_t>(id)});
    updates.push_back({id, clients[static_cast<std::size_t>(id)].size(),
                       local_train(init, clients[static_cast<std::size_t>(id)].train, tc)});
  }
  std::vector<WeightedModel> weighted;
  for (const auto& u : updates) {
    weighted.push_back({u.client_id, std::cref(u.result.local), u.size});
  }
  CHECK(aggregate(weighted) == result.final_model);
}

TEST_CASE("K equal to the population samples everyone") {
  ExperimentConfig cfg = small_config();
  cfg.clients_per_round = cfg.data.n_clients;
  cfg.strategy = Strategy::random;
  cfg.rounds = 2;
  const auto r = run_experiment(cfg, 2);
  for (const auto& it : r.log.iterations) {
    CHECK(it.trained_ids.size() == static_cast<std::size_t>(cfg.data.n_clients));
  }
}

TEST_CASE("same seed, same model, bit for bit") {
  const auto cfg = small_config();
  const auto a = run_experiment(cfg, 11);
  const auto b = run_experiment(cfg, 11);
  CHECK(a.final_model == b.final_model);
  CHECK(same_log(a.log, b.log));
}

TEST_CASE("worker count does not change results") {
  auto cfg = small_config();
  cfg.rounds = 3;
  for (auto strategy : {Strategy::terraform, Strategy::poc, Strategy::oort}) {
    cfg.strategy = strategy;
    cfg.workers = 1;
    const auto serial = run_experiment(cfg, 4);
    cfg.workers = 4;
    const auto parallel = run_experiment(cfg, 4);
    CHECK(serial.final_model == parallel.final_model);
    CHECK(same_log(serial.log, parallel.log));
  }
}

TEST_CASE("zero rounds return the initial model") {
  auto cfg = small_config();
  cfg.rounds = 0;
  const auto r = run_experiment(cfg, 3);
  CHECK(r.final_model == initial_model(cfg, 3));
  CHECK(r.log.rounds.empty());
  CHECK(r.log.iterations.empty());
  CHECK(r.log.total_client_trainings == 0);
}

TEST_CASE("hard sets shrink, rounds end within T, bookkeeping adds up") {
  for (int eta : {1, 2, 3, 4}) {
    for (auto range : {QuartileRange::q1_q3, QuartileRange::full, QuartileRange::zero_q3,
                       QuartileRange::q1_end}) {
      auto cfg = small_config();
      cfg.eta = eta;
      cfg.quartile_range = range;
      cfg.max_iterations = 6;
      const auto r = run_experiment(cfg, 21);
      std::int64_t trainings = 0;
      for (const auto& it : r.log.iterations) {
        trainings += static_cast<std::int64_t>(it.trained_ids.size());
        CHECK(it.next_hard_size < it.trained_ids.size());
        CHECK(it.iteration < cfg.max_iterations);
      }
      CHECK(trainings == r.log.total_client_trainings);
      for (const auto& round : r.log.rounds) {
        CHECK(round.iterations <= cfg.max_iterations);
      }
      // Consecutive iterations in a round train exactly the previous hard set.
      for (std::size_t i = 1; i < r.log.iterations.size(); ++i) {
        const auto& prev = r.log.iterations[i - 1];
        const auto& cur = r.log.iterations[i];
        if (cur.round == prev.round) {
          auto expected = prev.split->hard_ids;
          std::sort(expected.begin(), expected.end());
          CHECK(cur.trained_ids == expected);
        }
      }
    }
  }
}

TEST_CASE("baselines train exactly one selection per round") {
  for (auto strategy : {Strategy::random, Strategy::poc, Strategy::oort}) {
    auto cfg = small_config();
    cfg.strategy = strategy;
    cfg.clients_per_round = 5;
    const auto r = run_experiment(cfg, 6);
    REQUIRE(r.log.iterations.size() == static_cast<std::size_t>(cfg.rounds));
    for (const auto& it : r.log.iterations) {
      CHECK(it.trained_ids.size() == 5);
      CHECK_FALSE(it.split.has_value());
    }
  }
}

TEST_CASE("divergence carries round, iteration and client") {
  auto cfg = small_config();
  cfg.train.learning_rate = 1e305;
  cfg.data.class_separation = 1e150;
  try {
    run_experiment(cfg, 1);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.round() == 0);
    CHECK(e.iteration() == 0);
    CHECK(e.client_id().has_value());
  }
}

TEST_CASE("participant-only evaluation uses a different pool") {
  auto cfg = small_config();
  cfg.rounds = 2;
  const auto all = run_experiment(cfg, 13);
  cfg.eval_participants_only = true;
  const auto participants = run_experiment(cfg, 13);
  CHECK(all.final_model == participants.final_model);
  CHECK(all.log.rounds.back().accuracy != participants.log.rounds.back().accuracy);
}

TEST_CASE("FedProx runs and differs from FedAvg") {
  auto cfg = small_config();
  cfg.rounds = 2;
  const auto avg = run_experiment(cfg, 2);
  cfg.fl_algorithm = FlAlgorithm::fedprox;
  cfg.mu = 0.1;
  const auto prox = run_experiment(cfg, 2);
  CHECK_FALSE(avg.final_model == prox.final_model);
}

TEST_CASE("client data does not depend on the strategy") {
  const auto cfg = small_config();
  const auto a = build_clients(cfg.data, 77);
  const auto b = build_clients(cfg.data, 77);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].train == b[k].train);
  }
}

TEST_CASE("learning rate decays per round") {
  auto cfg = small_config();
  cfg.train.learning_rate = 0.8;
  cfg.train.lr_decay = 0.5;
  cfg.train.decay_every = 10;
  Federation fed(cfg, build_clients(cfg.data, 1), 1);
  CHECK(fed.learning_rate_for_round(0) == 0.8);
  CHECK(fed.learning_rate_for_round(9) == 0.8);
  CHECK(fed.learning_rate_for_round(10) == 0.4);
  CHECK(fed.learning_rate_for_round(25) == 0.2);
}
