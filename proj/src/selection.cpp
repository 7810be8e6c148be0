#include "fedsplit/selection.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <tuple>
#include <string>

#include "fedsplit/errors.hpp"
#include "fedsplit/rng.hpp"

namespace fedsplit {

std::vector<ClientSummary> sort_by_magnitude(std::span<const ClientSummary> summaries) {
  std::vector<ClientSummary> sorted(summaries.begin(), summaries.end());
  std::sort(sorted.begin(), sorted.end(), [](const ClientSummary& a, const ClientSummary& b) {
    if (a.magnitude != b.magnitude) {
      return a.magnitude < b.magnitude;
    }
    return a.client_id < b.client_id;
  });
  return sorted;
}

std::vector<std::int64_t> running_sums(std::span<const ClientSummary> sorted) {
  std::vector<std::int64_t> sums;
  sums.reserve(sorted.size());
  std::int64_t acc = 0;
  for (const auto& s : sorted) {
    acc += s.size;
    sums.push_back(acc);
  }
  return sums;
}

QuartileIndices iqr_indices(std::span<const std::int64_t> sums) {
  if (sums.empty()) {
    throw InvalidArgument("iqr_indices: empty running sums");
  }
  const std::int64_t total = sums.back();
  auto first_reaching = [&](std::int64_t numerator) {
    // smallest k with 4 * S_k >= numerator * S_K
    const auto it = std::find_if(sums.begin(), sums.end(), [&](std::int64_t s) {
      return 4 * s >= numerator * total;
    });
    return static_cast<std::size_t>(it - sums.begin()) + 1;
  };
  return {first_reaching(1), first_reaching(3)};
}

namespace {

void check_weighted_input(std::span<const double> values, std::span<const std::int64_t> sizes,
                          const char* where) {
  if (values.empty()) {
    throw InvalidArgument(std::string(where) + ": empty input");
  }
  if (values.size() != sizes.size()) {
    throw InvalidArgument(std::string(where) + ": values and sizes differ in length");
  }
  for (auto s : sizes) {
    if (s <= 0) {
      throw InvalidArgument(std::string(where) + ": sizes must be positive");
    }
  }
}

double total_size(std::span<const std::int64_t> sizes) {
  double s = 0.0;
  for (auto v : sizes) {
    s += static_cast<double>(v);
  }
  return s;
}

struct ClusterPair {
  double weight_first;
  double weight_second;
};

ClusterPair cluster_weights(std::span<const std::int64_t> sizes, std::size_t tau,
                            ClusterWeighting weighting) {
  const std::size_t n = sizes.size();
  if (weighting == ClusterWeighting::count) {
    return {static_cast<double>(tau) / static_cast<double>(n),
            static_cast<double>(n - tau) / static_cast<double>(n)};
  }
  const double all = total_size(sizes);
  const double first = total_size(sizes.first(tau));
  return {first / all, (all - first) / all};
}

}  // namespace

double weighted_mean(std::span<const double> values, std::span<const std::int64_t> sizes) {
  check_weighted_input(values, sizes, "weighted_mean");
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += static_cast<double>(sizes[i]) * values[i];
  }
  return acc / total_size(sizes);
}

double weighted_variance(std::span<const double> values, std::span<const std::int64_t> sizes) {
  const double mean = weighted_mean(values, sizes);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    acc += static_cast<double>(sizes[i]) * d * d;
  }
  return acc / total_size(sizes);
}

double intra_split_variance(std::span<const double> values, std::span<const std::int64_t> sizes,
                            std::size_t tau, ClusterWeighting weighting) {
  check_weighted_input(values, sizes, "intra_split_variance");
  if (tau < 1 || tau >= values.size()) {
    throw InvalidArgument("intra_split_variance: tau " + std::to_string(tau) +
                          " outside [1, " + std::to_string(values.size()) + ")");
  }
  const auto w = cluster_weights(sizes, tau, weighting);
  return w.weight_first * weighted_variance(values.first(tau), sizes.first(tau)) +
         w.weight_second * weighted_variance(values.subspan(tau), sizes.subspan(tau));
}

double inter_split_variance(std::span<const double> values, std::span<const std::int64_t> sizes,
                            std::size_t tau, ClusterWeighting weighting) {
  check_weighted_input(values, sizes, "inter_split_variance");
  if (tau < 1 || tau >= values.size()) {
    throw InvalidArgument("inter_split_variance: tau out of range");
  }
  const auto w = cluster_weights(sizes, tau, weighting);
  const double mean = weighted_mean(values, sizes);
  const double d1 = weighted_mean(values.first(tau), sizes.first(tau)) - mean;
  const double d2 = weighted_mean(values.subspan(tau), sizes.subspan(tau)) - mean;
  return w.weight_first * d1 * d1 + w.weight_second * d2 * d2;
}

std::optional<std::size_t> optimal_split_index(std::span<const double> values,
                                               std::span<const std::int64_t> sizes,
                                               std::size_t lo, std::size_t hi,
                                               ClusterWeighting weighting) {
  check_weighted_input(values, sizes, "optimal_split_index");
  const std::size_t n = values.size();
  if (lo < 1 || hi > n || lo > hi) {
    throw InvalidArgument("optimal_split_index: invalid range [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + ") for " + std::to_string(n) + " values");
  }
  if (lo == hi) {
    if (lo < n) {
      return lo;
    }
    return std::nullopt;
  }

  // Centre on a data value: keeps the running moments small and makes
  // constant inputs produce exact zeros (so ties resolve to the smallest tau).
  const double shift = values[n / 2];
  double total_w = 0.0;
  double total_wx = 0.0;
  double total_wxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = static_cast<double>(sizes[i]);
    const double x = values[i] - shift;
    total_w += w;
    total_wx += w * x;
    total_wxx += w * x * x;
  }

  auto sse = [](double w, double wx, double wxx) { return std::max(0.0, wxx - wx * wx / w); };

  double left_w = 0.0;
  double left_wx = 0.0;
  double left_wxx = 0.0;
  std::size_t best_tau = lo;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < hi; ++i) {
    const double w = static_cast<double>(sizes[i]);
    const double x = values[i] - shift;
    left_w += w;
    left_wx += w * x;
    left_wxx += w * x * x;
    const std::size_t tau = i + 1;
    if (tau < lo) {
      continue;
    }
    const double right_w = total_w - left_w;
    const double sse_left = sse(left_w, left_wx, left_wxx);
    const double sse_right = sse(right_w, total_wx - left_wx, total_wxx - left_wxx);
    double intra = 0.0;
    if (weighting == ClusterWeighting::size) {
      intra = (sse_left + sse_right) / total_w;
    } else {
      const double nn = static_cast<double>(n);
      intra = (static_cast<double>(tau) / nn) * (sse_left / left_w) +
              (static_cast<double>(n - tau) / nn) * (sse_right / right_w);
    }
    if (intra < best) {
      best = intra;
      best_tau = tau;
    }
  }
  return best_tau;
}

std::pair<std::size_t, std::size_t> search_bounds(QuartileRange range, std::size_t n,
                                                  const QuartileIndices& q) {
  switch (range) {
    case QuartileRange::q1_q3:
      return {q.k_q1, q.k_q3};
    case QuartileRange::full:
      return {1, n};
    case QuartileRange::zero_q3:
      return {1, q.k_q3};
    case QuartileRange::q1_end:
      return {q.k_q1, n};
  }
  return {q.k_q1, q.k_q3};
}

SplitDecision split_clients(std::span<const ClientSummary> summaries, const SplitOptions& options) {
  if (summaries.size() < 2) {
    throw InvalidArgument("split_clients: need at least 2 clients, got " +
                          std::to_string(summaries.size()));
  }
  const auto sorted = sort_by_magnitude(summaries);
  const std::size_t n = sorted.size();

  SplitDecision d;
  d.sorted_ids.reserve(n);
  d.sorted_magnitudes.reserve(n);
  d.sorted_sizes.reserve(n);
  for (const auto& s : sorted) {
    d.sorted_ids.push_back(s.client_id);
    d.sorted_magnitudes.push_back(s.magnitude);
    d.sorted_sizes.push_back(s.size);
  }
  d.running_sums = running_sums(sorted);
  const auto q = iqr_indices(d.running_sums);
  d.k_q1 = q.k_q1;
  d.k_q3 = q.k_q3;
  std::tie(d.search_lo, d.search_hi) = search_bounds(options.range, n, q);

  const auto tau = optimal_split_index(d.sorted_magnitudes, d.sorted_sizes, d.search_lo,
                                       d.search_hi, options.weighting);
  d.var_total = weighted_variance(d.sorted_magnitudes, d.sorted_sizes);
  if (!tau) {
    d.terminal = true;
    d.tau_split = n;
    d.easy_ids = d.sorted_ids;
    d.var_intra = d.var_total;
    d.var_inter = 0.0;
    return d;
  }
  d.tau_split = *tau;
  d.easy_ids.assign(d.sorted_ids.begin(), d.sorted_ids.begin() + static_cast<long>(*tau));
  d.hard_ids.assign(d.sorted_ids.begin() + static_cast<long>(*tau), d.sorted_ids.end());
  d.var_intra = intra_split_variance(d.sorted_magnitudes, d.sorted_sizes, *tau, options.weighting);
  d.var_inter = inter_split_variance(d.sorted_magnitudes, d.sorted_sizes, *tau, options.weighting);
  return d;
}

std::vector<int> random_select(std::span<const int> pool, std::size_t k, std::uint64_t seed) {
  if (k > pool.size()) {
    throw InvalidArgument("random_select: k = " + std::to_string(k) + " exceeds pool of " +
                          std::to_string(pool.size()));
  }
  std::vector<int> out;
  out.reserve(k);
  Rng rng(seed);
  std::sample(pool.begin(), pool.end(), std::back_inserter(out), k, rng);
  return out;
}

std::vector<int> poc_select(std::span<const ClientSummary> summaries, std::size_t d,
                            std::size_t m, std::uint64_t seed) {
  if (m < 1 || m > d || d > summaries.size()) {
    throw InvalidArgument("poc_select: need 1 <= m <= d <= number of clients");
  }
  std::vector<int> ids;
  ids.reserve(summaries.size());
  for (const auto& s : summaries) {
    ids.push_back(s.client_id);
  }
  const auto candidates = random_select(ids, d, seed);
  std::vector<ClientSummary> pool;
  for (int id : candidates) {
    pool.push_back(*std::find_if(summaries.begin(), summaries.end(),
                                 [id](const ClientSummary& s) { return s.client_id == id; }));
  }
  std::sort(pool.begin(), pool.end(), [](const ClientSummary& a, const ClientSummary& b) {
    if (a.loss != b.loss) {
      return a.loss > b.loss;
    }
    return a.client_id < b.client_id;
  });
  std::vector<int> out;
  for (std::size_t i = 0; i < m; ++i) {
    out.push_back(pool[i].client_id);
  }
  return out;
}

std::vector<int> oort_select(std::span<const ClientSummary> summaries, std::size_t k,
                             double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0 && epsilon < 1.0) || k > summaries.size()) {
    throw InvalidArgument("oort_select: need 0 <= epsilon < 1 and k <= number of clients");
  }
  const auto n_explore = static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(k)));
  const std::size_t n_exploit = k - n_explore;

  std::vector<ClientSummary> ranked(summaries.begin(), summaries.end());
  std::sort(ranked.begin(), ranked.end(), [](const ClientSummary& a, const ClientSummary& b) {
    const double ua = static_cast<double>(a.size) * a.loss;
    const double ub = static_cast<double>(b.size) * b.loss;
    if (ua != ub) {
      return ua > ub;
    }
    return a.client_id < b.client_id;
  });
  std::vector<int> out;
  out.reserve(k);
  for (std::size_t i = 0; i < n_exploit; ++i) {
    out.push_back(ranked[i].client_id);
  }
  std::vector<int> rest;
  for (std::size_t i = n_exploit; i < ranked.size(); ++i) {
    rest.push_back(ranked[i].client_id);
  }
  std::sort(rest.begin(), rest.end());
  for (int id : random_select(rest, n_explore, seed)) {
    out.push_back(id);
  }
  return out;
}

}  // namespace fedsplit
