#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedsplit/datagen.hpp"
#include "fedsplit/errors.hpp"

using namespace fedsplit;

namespace {

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];
}

double max_class_share(const ClientDataset& c) {
  const auto tr = c.train.class_counts();
  const auto te = c.test.class_counts();
  std::int64_t total = 0;
  std::int64_t top = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    total += tr[i] + te[i];
    top = std::max(top, tr[i] + te[i]);
  }
  return static_cast<double>(top) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("generate_synthetic_dataset balances labels") {
  const auto d = generate_synthetic_dataset(2, 2, 4, 10.0, 1);
  auto labels = d.labels;
  std::sort(labels.begin(), labels.end());
  CHECK(labels == std::vector<int>{0, 0, 1, 1});
  CHECK(d.features.rows() == 4);
  CHECK(d.features.cols() == 2);

  const auto big = generate_synthetic_dataset(7, 5, 1003, 3.0, 2);
  const auto counts = big.class_counts();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*hi - *lo <= 1);
}

TEST_CASE("generate_synthetic_dataset is deterministic per seed") {
  const auto a = generate_synthetic_dataset(5, 8, 300, 4.0, 7);
  const auto b = generate_synthetic_dataset(5, 8, 300, 4.0, 7);
  CHECK(a == b);
  const auto c = generate_synthetic_dataset(5, 8, 300, 4.0, 8);
  CHECK_FALSE(a == c);
}

TEST_CASE("class means respect the separation") {
  for (auto [classes, dim] : {std::pair{10, 20}, std::pair{6, 3}}) {
    const auto d = generate_synthetic_dataset(classes, dim, 60000, 4.0, 3);
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(classes, dim);
    const auto counts = d.class_counts();
    for (std::size_t i = 0; i < d.size(); ++i) {
      means.row(d.labels[i]) += d.features.row(static_cast<Eigen::Index>(i));
    }
    for (int c = 0; c < classes; ++c) {
      means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    }
    double min_dist = 1e300;
    for (int a = 0; a < classes; ++a) {
      for (int b = a + 1; b < classes; ++b) {
        min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
      }
    }
    // Empirical means carry sampling noise of roughly 0.8 * sqrt(dim / 6000).
    CHECK(min_dist > 4.0 - 0.15);
  }
}

TEST_CASE("generate_synthetic_dataset rejects bad arguments") {
  CHECK_THROWS_AS(generate_synthetic_dataset(1, 2, 10, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_synthetic_dataset(3, 1, 10, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_synthetic_dataset(3, 2, 2, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(generate_synthetic_dataset(3, 2, 10, 0.0, 1), InvalidArgument);
}

TEST_CASE("assign_alpha_groups") {
  const std::vector<double> five{0.001, 0.002, 0.005, 0.01, 0.5};
  const auto a = assign_alpha_groups(100, five);
  for (std::size_t g = 0; g < five.size(); ++g) {
    CHECK(std::count(a.begin(), a.end(), five[g]) == 20);
    CHECK(a[g * 20] == five[g]);
    CHECK(a[g * 20 + 19] == five[g]);
  }
  CHECK(assign_alpha_groups(4, std::vector<double>{0.1}) == std::vector<double>(4, 0.1));
  CHECK(assign_alpha_groups(7, std::vector<double>{0.1, 0.5}) ==
        std::vector<double>{0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 0.5});
  CHECK_THROWS_AS(assign_alpha_groups(4, std::vector<double>{}), InvalidArgument);
  CHECK_THROWS_AS(assign_alpha_groups(4, std::vector<double>{0.1, -1.0}), InvalidArgument);
}

TEST_CASE("log-space Dirichlet draws normalise and stay finite at tiny alpha") {
  Rng rng(5);
  for (double alpha : {1e-3, 0.1, 1.0, 50.0}) {
    for (int i = 0; i < 50; ++i) {
      const auto logs = sample_log_dirichlet(alpha, 10, rng);
      double total = 0.0;
      for (double l : logs) {
        REQUIRE(std::isfinite(l));
        total += std::exp(l);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("Dirichlet(0.001) oracle: one class takes almost all the mass") {
  // Direct draws from the concentration itself, before any allocation.
  Rng rng(17);
  std::vector<double> tops;
  for (int i = 0; i < 200; ++i) {
    const auto logs = sample_log_dirichlet(0.001, 10, rng);
    tops.push_back(std::exp(*std::max_element(logs.begin(), logs.end())));
  }
  CHECK(median(tops) > 0.95);
}

TEST_CASE("dirichlet_partition: tiny alpha concentrates each client on one class") {
  std::vector<double> per_seed;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pool = generate_synthetic_dataset(10, 20, 10000, 4.0, 100 + seed);
    const auto clients = dirichlet_partition(pool, {10, {0.001}, seed, 0.8});
    std::vector<double> shares;
    for (const auto& c : clients) {
      shares.push_back(max_class_share(c));
    }
    per_seed.push_back(median(shares));
  }
  CHECK(median(per_seed) > 0.95);
}

TEST_CASE("dirichlet_partition: huge alpha is close to uniform") {
  const auto pool = generate_synthetic_dataset(2, 2, 1000, 4.0, 9);
  const auto clients = dirichlet_partition(pool, {2, {1e6}, 4, 0.8});
  for (const auto& c : clients) {
    const auto tr = c.train.class_counts();
    const auto te = c.test.class_counts();
    const double n = static_cast<double>(tr[0] + tr[1] + te[0] + te[1]);
    CHECK(std::abs((tr[0] + te[0]) / n - 0.5) < 0.02);
  }
}

TEST_CASE("dirichlet_partition conserves every pool sample") {
  const auto pool = generate_synthetic_dataset(5, 3, 777, 4.0, 21);
  const auto clients = dirichlet_partition(pool, {13, {0.05, 0.5, 5.0}, 8, 0.8});
  std::vector<std::vector<double>> seen;
  std::int64_t train_total = 0;
  for (const auto& c : clients) {
    CHECK(c.size() > 0);
    CHECK(c.train.n_classes == pool.n_classes);
    CHECK(c.test.n_classes == pool.n_classes);
    train_total += c.size();
    for (const auto* part : {&c.train, &c.test}) {
      for (Eigen::Index i = 0; i < part->features.rows(); ++i) {
        seen.push_back({part->features(i, 0), part->features(i, 1), part->features(i, 2),
                        static_cast<double>(part->labels[static_cast<std::size_t>(i)])});
      }
    }
  }
  std::vector<std::vector<double>> expected;
  for (Eigen::Index i = 0; i < pool.features.rows(); ++i) {
    expected.push_back({pool.features(i, 0), pool.features(i, 1), pool.features(i, 2),
                        static_cast<double>(pool.labels[static_cast<std::size_t>(i)])});
  }
  std::sort(seen.begin(), seen.end());
  std::sort(expected.begin(), expected.end());
  CHECK(seen == expected);
  // Per-(client, class) rounding of the 0.8 split.
  CHECK(std::abs(static_cast<double>(train_total) - 0.8 * 777) <= 13 * 5 * 0.5);
}

TEST_CASE("dirichlet_partition is deterministic") {
  const auto pool = generate_synthetic_dataset(4, 3, 400, 4.0, 2);
  const PartitionPlan plan{6, {0.1, 1.0}, 12, 0.8};
  const auto a = dirichlet_partition(pool, plan);
  const auto b = dirichlet_partition(pool, plan);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].train == b[k].train);
    CHECK(a[k].test == b[k].test);
    CHECK(a[k].alpha == b[k].alpha);
  }
}

TEST_CASE("dirichlet_partition fails loudly when clients cannot all get data") {
  const auto pool = generate_synthetic_dataset(2, 2, 2, 4.0, 1);
  CHECK_THROWS_AS(dirichlet_partition(pool, {5, {1.0}, 3, 0.8}), PartitionFailure);
}

TEST_CASE("label entropy falls as alpha falls") {
  const std::vector<double> alphas{10.0, 1.0, 0.1, 0.01};
  std::vector<double> medians;
  for (double alpha : alphas) {
    std::vector<double> per_seed;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto pool = generate_synthetic_dataset(10, 4, 2000, 4.0, 500 + seed);
      const auto clients = dirichlet_partition(pool, {20, {alpha}, seed, 0.8});
      double h = 0.0;
      for (const auto& c : clients) {
        h += label_entropy(c.train);
      }
      per_seed.push_back(h / static_cast<double>(clients.size()));
    }
    medians.push_back(median(per_seed));
  }
  for (std::size_t i = 1; i < medians.size(); ++i) {
    CHECK(medians[i] <= medians[i - 1]);
  }
}

TEST_CASE("partition summary export") {
  const auto pool = generate_synthetic_dataset(3, 2, 90, 4.0, 1);
  const auto clients = dirichlet_partition(pool, {4, {0.5}, 1, 0.8});
  std::ostringstream out;
  write_partition_summary(out, clients);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "client_id,alpha,size,class_0,class_1,class_2");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
  }
  CHECK(rows == 4);
}
