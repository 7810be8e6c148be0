#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedsplit/selection.hpp"

namespace fedsplit {

struct RoundMetrics {
  int round = 0;
  double accuracy = 0.0;
  /// Mean of the reported last-epoch training losses over the round's trainings.
  double mean_loss = 0.0;
  int iterations = 0;
  int clients_trained = 0;
  /// Simulation-local compute only; excluded from determinism guarantees.
  double train_ms = 0.0;
  double split_ms = 0.0;
};

struct IterationRecord {
  int round = 0;
  int iteration = 0;
  std::vector<int> trained_ids;
  double mean_loss = 0.0;
  std::optional<SplitDecision> split;
  std::size_t next_hard_size = 0;
  bool terminated = false;
  double train_ms = 0.0;
  double split_ms = 0.0;
};

struct MetricsLog {
  std::vector<RoundMetrics> rounds;
  std::vector<IterationRecord> iterations;
  std::int64_t total_client_trainings = 0;
  double total_ms = 0.0;

  std::optional<double> final_accuracy() const;
};

/// 6 significant digits, as used in every CSV.
std::string format_real(double v);

// Column sets are fixed; see README.
inline constexpr const char* kMetricsHeader =
    "round,accuracy,mean_loss,iterations,clients_trained,train_ms";
inline constexpr const char* kSplitsHeader =
    "round,iteration,hard_size,trained_ids,sorted_ids,sorted_magnitudes,sizes,k_q1,k_q3,"
    "tau_split,var_intra,var_inter,next_hard_size,terminated,split_ms";

void write_metrics_csv(std::ostream& out, const MetricsLog& log);
void write_splits_csv(std::ostream& out, const MetricsLog& log);

}  // namespace fedsplit
