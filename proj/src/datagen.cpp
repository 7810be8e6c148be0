#include "fedsplit/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "fedsplit/errors.hpp"

namespace fedsplit {

std::vector<std::int64_t> LabeledDataset::class_counts() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int label : labels) {
    ++counts[static_cast<std::size_t>(label)];
  }
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.n_classes = n_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) =
        features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  return n_classes == other.n_classes && labels == other.labels &&
         features.rows() == other.features.rows() &&
         features.cols() == other.features.cols() && features == other.features;
}

namespace {

Eigen::MatrixXd place_class_means(int n_classes, int dim, double separation, Rng& rng) {
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(n_classes, dim);
  if (n_classes <= dim) {
    // Scaled one-hot means on a random subset of axes: every pair is exactly
    // `separation` apart.
    std::vector<int> axes(static_cast<std::size_t>(dim));
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    const double scale = separation / std::sqrt(2.0);
    for (int c = 0; c < n_classes; ++c) {
      means(c, axes[static_cast<std::size_t>(c)]) = scale;
    }
    return means;
  }
  // More classes than dimensions: random directions, rescaled until the
  // closest pair clears the separation.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < n_classes; ++c) {
    for (int j = 0; j < dim; ++j) {
      means(c, j) = normal(rng);
    }
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < n_classes; ++a) {
    for (int b = a + 1; b < n_classes; ++b) {
      min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
    }
  }
  if (min_dist <= 0.0) {
    throw InvalidArgument("degenerate class means");
  }
  means *= separation / min_dist;
  return means;
}

std::vector<std::int64_t> largest_remainder(std::int64_t total, std::span<const double> weights) {
  const std::size_t n = weights.size();
  std::vector<std::int64_t> alloc(n, 0);
  std::vector<double> frac(n, 0.0);
  std::int64_t assigned = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double quota = static_cast<double>(total) * weights[k];
    const double whole = std::floor(quota);
    alloc[k] = static_cast<std::int64_t>(whole);
    frac[k] = quota - whole;
    assigned += alloc[k];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  // Floating error can leave the floors off by more than n in theory; cycle.
  for (std::size_t i = 0; assigned < total; i = (i + 1) % n) {
    ++alloc[order[i]];
    ++assigned;
  }
  while (assigned > total) {
    auto it = std::max_element(alloc.begin(), alloc.end());
    --*it;
    --assigned;
  }
  return alloc;
}

}  // namespace

LabeledDataset generate_synthetic_dataset(int n_classes, int dim, int n_samples,
                                          double class_separation, std::uint64_t seed,
                                          double noise_std) {
  if (n_classes < 2 || dim < 2 || n_samples < n_classes) {
    throw InvalidArgument("generate_synthetic_dataset: need n_classes >= 2, dim >= 2, "
                          "n_samples >= n_classes");
  }
  if (!(class_separation > 0.0) || !(noise_std > 0.0)) {
    throw InvalidArgument("generate_synthetic_dataset: separation and noise must be positive");
  }
  Rng rng(seed);
  const Eigen::MatrixXd means = place_class_means(n_classes, dim, class_separation, rng);

  LabeledDataset data;
  data.n_classes = n_classes;
  data.labels.resize(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    data.labels[static_cast<std::size_t>(i)] = i % n_classes;
  }
  std::shuffle(data.labels.begin(), data.labels.end(), rng);

  std::normal_distribution<double> normal(0.0, noise_std);
  data.features.resize(n_samples, dim);
  for (int i = 0; i < n_samples; ++i) {
    const int label = data.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < dim; ++j) {
      data.features(i, j) = means(label, j) + normal(rng);
    }
  }
  return data;
}

std::vector<double> assign_alpha_groups(int n_clients, std::span<const double> alpha_list) {
  if (alpha_list.empty()) {
    throw InvalidArgument("assign_alpha_groups: alpha list is empty");
  }
  if (n_clients <= 0) {
    throw InvalidArgument("assign_alpha_groups: n_clients must be positive");
  }
  for (double a : alpha_list) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw InvalidArgument("assign_alpha_groups: every alpha must be positive and finite");
    }
  }
  const int groups = static_cast<int>(alpha_list.size());
  const int per_group = n_clients / groups;
  std::vector<double> out(static_cast<std::size_t>(n_clients), alpha_list.back());
  for (int k = 0; k < n_clients; ++k) {
    const int group = per_group > 0 ? std::min(k / per_group, groups - 1) : groups - 1;
    out[static_cast<std::size_t>(k)] = alpha_list[static_cast<std::size_t>(group)];
  }
  return out;
}

std::vector<double> sample_log_dirichlet(double alpha, int dim, Rng& rng) {
  // Gamma(a) = Gamma(a + 1) * U^(1/a), so log Gamma(a) draws stay finite.
  std::gamma_distribution<double> gamma(alpha + 1.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> logs(static_cast<std::size_t>(dim));
  for (auto& v : logs) {
    const double g = gamma(rng);
    double u = uniform(rng);
    while (u <= 0.0) {
      u = uniform(rng);
    }
    v = std::log(g) + std::log(u) / alpha;
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  double total = 0.0;
  for (double v : logs) {
    total += std::exp(v - top);
  }
  const double log_norm = top + std::log(total);
  for (auto& v : logs) {
    v -= log_norm;
  }
  return logs;
}

std::vector<ClientDataset> dirichlet_partition(const LabeledDataset& pool,
                                               const PartitionPlan& plan) {
  constexpr int kMaxRedraws = 10;
  if (plan.n_clients <= 0) {
    throw InvalidArgument("dirichlet_partition: n_clients must be positive");
  }
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
    throw InvalidArgument("dirichlet_partition: train_fraction must lie in (0, 1)");
  }
  const auto alphas = assign_alpha_groups(plan.n_clients, plan.alpha_groups);
  const int n_classes = pool.n_classes;
  const auto counts = pool.class_counts();
  if (std::any_of(counts.begin(), counts.end(), [](std::int64_t c) { return c == 0; })) {
    throw InvalidArgument("dirichlet_partition: every class needs at least one pool sample");
  }
  const auto n_clients = static_cast<std::size_t>(plan.n_clients);

  std::vector<std::vector<std::size_t>> class_rows(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    class_rows[static_cast<std::size_t>(pool.labels[i])].push_back(i);
  }
  for (int c = 0; c < n_classes; ++c) {
    Rng shuffle_rng(derive_seed(plan.seed, {stream::kPartition, 1, static_cast<std::uint64_t>(c)}));
    std::shuffle(class_rows[static_cast<std::size_t>(c)].begin(),
                 class_rows[static_cast<std::size_t>(c)].end(), shuffle_rng);
  }

  auto draw = [&](std::size_t client, int attempt) {
    Rng rng(derive_seed(plan.seed, {stream::kPartition, 0, client,
                                    static_cast<std::uint64_t>(attempt)}));
    return sample_log_dirichlet(alphas[client], n_classes, rng);
  };
  std::vector<std::vector<double>> log_mix(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    log_mix[k] = draw(k, 0);
  }

  // alloc[c][k] = samples of class c given to client k
  std::vector<std::vector<std::int64_t>> alloc(static_cast<std::size_t>(n_classes));
  for (int attempt = 0;; ++attempt) {
    std::vector<std::int64_t> totals(n_clients, 0);
    for (int c = 0; c < n_classes; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n_clients; ++k) {
        top = std::max(top, log_mix[k][cc]);
      }
      std::vector<double> weights(n_clients);
      double sum = 0.0;
      for (std::size_t k = 0; k < n_clients; ++k) {
        weights[k] = std::exp(log_mix[k][cc] - top);
        sum += weights[k];
      }
      for (auto& w : weights) {
        w /= sum;
      }
      alloc[cc] = largest_remainder(counts[cc], weights);
      for (std::size_t k = 0; k < n_clients; ++k) {
        totals[k] += alloc[cc][k];
      }
    }
    // A client with any samples has a non-empty train split (round(0.8 n) >= 1
    // for n >= 1), so checking totals is enough.
    std::vector<std::size_t> empty;
    for (std::size_t k = 0; k < n_clients; ++k) {
      if (totals[k] == 0) {
        empty.push_back(k);
      }
    }
    if (empty.empty()) {
      break;
    }
    if (attempt == kMaxRedraws) {
      throw PartitionFailure("dirichlet_partition: client " + std::to_string(empty.front()) +
                             " has no samples after " + std::to_string(kMaxRedraws) +
                             " re-draws");
    }
    for (std::size_t k : empty) {
      log_mix[k] = draw(k, attempt + 1);
    }
  }

  std::vector<std::vector<std::size_t>> train_rows(n_clients);
  std::vector<std::vector<std::size_t>> test_rows(n_clients);
  for (int c = 0; c < n_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < n_clients; ++k) {
      const auto n = alloc[cc][k];
      const auto n_train = std::min<std::int64_t>(
          n, std::llround(static_cast<double>(n) * plan.train_fraction));
      for (std::int64_t i = 0; i < n; ++i, ++cursor) {
        (i < n_train ? train_rows[k] : test_rows[k]).push_back(class_rows[cc][cursor]);
      }
    }
  }

  std::vector<ClientDataset> clients(n_clients);
  for (std::size_t k = 0; k < n_clients; ++k) {
    clients[k].client_id = static_cast<int>(k);
    clients[k].alpha = alphas[k];
    clients[k].train = pool.subset(train_rows[k]);
    clients[k].test = pool.subset(test_rows[k]);
  }
  return clients;
}

double label_entropy(const LabeledDataset& data) {
  if (data.empty()) {
    return 0.0;
  }
  double h = 0.0;
  const double n = static_cast<double>(data.size());
  for (auto c : data.class_counts()) {
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

void write_partition_summary(std::ostream& out, std::span<const ClientDataset> clients) {
  const int n_classes = clients.empty() ? 0 : clients.front().train.n_classes;
  out << "client_id,alpha,size";
  for (int c = 0; c < n_classes; ++c) {
    out << ",class_" << c;
  }
  out << '\n';
  for (const auto& client : clients) {
    const auto train = client.train.class_counts();
    const auto test = client.test.class_counts();
    out << client.client_id << ',' << client.alpha << ',' << client.size();
    for (std::size_t c = 0; c < train.size(); ++c) {
      out << ',' << train[c] + (c < test.size() ? test[c] : 0);
    }
    out << '\n';
  }
}

}  // namespace fedsplit
