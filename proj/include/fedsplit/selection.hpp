#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedsplit {

/// What a client reported after its latest local training.
struct ClientSummary {
  int client_id = 0;
  double magnitude = 0.0;
  std::int64_t size = 0;
  double loss = 0.0;
};

/// How the two clusters are weighted when combining their variances.
/// `size`  : S_{U_j} / S_N, consistent with the size-weighted per-cluster
///           variance, so total = intra + inter holds exactly.
/// `count` : |U_j| / N, the literal count-fraction form.
enum class ClusterWeighting { size, count };

/// Bounds of the split-index search, in terms of the quartile indices.
///   q1_q3   -> [k_Q1, k_Q3)
///   full    -> [1, N)
///   zero_q3 -> [1, k_Q3)
///   q1_end  -> [k_Q1, N)
enum class QuartileRange { q1_q3, full, zero_q3, q1_end };

struct SplitOptions {
  QuartileRange range = QuartileRange::q1_q3;
  ClusterWeighting weighting = ClusterWeighting::size;
};

/// Result of one easy/hard split. Indices are 1-based positions into the
/// sorted order; tau_split is the number of clients in the easy cluster.
struct SplitDecision {
  std::vector<int> sorted_ids;
  std::vector<double> sorted_magnitudes;
  std::vector<std::int64_t> sorted_sizes;
  std::vector<std::int64_t> running_sums;
  std::size_t k_q1 = 0;
  std::size_t k_q3 = 0;
  std::size_t search_lo = 0;
  std::size_t search_hi = 0;
  std::size_t tau_split = 0;
  /// No admissible split: every client stays easy and the hard set is empty.
  bool terminal = false;
  std::vector<int> easy_ids;
  std::vector<int> hard_ids;
  double var_intra = 0.0;
  double var_inter = 0.0;
  double var_total = 0.0;
};

/// Ascending magnitude, ties by ascending client id.
std::vector<ClientSummary> sort_by_magnitude(std::span<const ClientSummary> summaries);

/// S_k = sum of the first k sizes.
std::vector<std::int64_t> running_sums(std::span<const ClientSummary> sorted);

struct QuartileIndices {
  std::size_t k_q1 = 0;
  std::size_t k_q3 = 0;
};

/// Smallest 1-based k with S_k >= 0.25 S_K (resp. 0.75 S_K), compared in
/// integers as 4 S_k >= S_K (resp. 4 S_k >= 3 S_K).
QuartileIndices iqr_indices(std::span<const std::int64_t> sums);

double weighted_mean(std::span<const double> values, std::span<const std::int64_t> sizes);
double weighted_variance(std::span<const double> values, std::span<const std::int64_t> sizes);

/// Weighted within-cluster variance for the split that puts the first `tau`
/// values in the first cluster. Requires 1 <= tau < N.
double intra_split_variance(std::span<const double> values, std::span<const std::int64_t> sizes,
                            std::size_t tau, ClusterWeighting weighting = ClusterWeighting::size);

/// Between-cluster variance matching intra_split_variance's weighting.
double inter_split_variance(std::span<const double> values, std::span<const std::int64_t> sizes,
                            std::size_t tau, ClusterWeighting weighting = ClusterWeighting::size);

/// argmin of intra_split_variance over tau in [lo, hi), smallest tau on ties,
/// in one pass over prefix sums. When lo == hi the only candidate is lo; if
/// that is not a legal split (lo >= N) the result is nullopt (terminal).
std::optional<std::size_t> optimal_split_index(std::span<const double> values,
                                               std::span<const std::int64_t> sizes,
                                               std::size_t lo, std::size_t hi,
                                               ClusterWeighting weighting = ClusterWeighting::size);

/// Sort -> running sums -> quartile indices -> restricted argmin.
SplitDecision split_clients(std::span<const ClientSummary> summaries,
                            const SplitOptions& options = {});

/// Search bounds [lo, hi) for a range setting, given N and the quartiles.
std::pair<std::size_t, std::size_t> search_bounds(QuartileRange range, std::size_t n,
                                                  const QuartileIndices& q);

/// Uniform sample of k ids without replacement, in pool order.
std::vector<int> random_select(std::span<const int> pool, std::size_t k, std::uint64_t seed);

/// Power-of-choice: sample d candidates, keep the m with the highest loss
/// (ties by id). Output ordered by descending loss.
std::vector<int> poc_select(std::span<const ClientSummary> summaries, std::size_t d,
                            std::size_t m, std::uint64_t seed);

/// Statistical-utility ranking (size * loss): the top ceil((1 - eps) k) plus
/// floor(eps k) drawn uniformly from the rest.
std::vector<int> oort_select(std::span<const ClientSummary> summaries, std::size_t k,
                             double epsilon, std::uint64_t seed);

}  // namespace fedsplit
