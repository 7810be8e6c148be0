#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedsplit/config.hpp"
#include "fedsplit/federation.hpp"

namespace fedsplit {

struct SeedRun {
  std::uint64_t seed = 0;
  ExperimentResult result;
};

/// One row of summary.csv / comparison.csv / ablation_<axis>.csv.
struct SettingSummary {
  std::string label;
  std::size_t n_seeds = 0;
  double mean_accuracy = 0.0;
  double stddev_accuracy = 0.0;
  std::int64_t client_trainings = 0;
  double train_ms = 0.0;
  double split_search_ms = 0.0;
  /// Empty on success; the diagnostic otherwise.
  std::string error;
};

/// Mean and sample standard deviation of final accuracy over the runs.
SettingSummary summarize(std::string label, std::span<const SeedRun> runs);

/// Runs every configured seed and writes metrics_<seed>.csv, splits_<seed>.csv
/// (and checkpoints, if enabled) into `dir`. Files for finished seeds stay on
/// disk if a later seed fails.
std::vector<SeedRun> run_seeds(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// `run` verb: run_seeds + summary.csv into cfg.output_dir. Returns the exit code.
int run_cmd(const ExperimentConfig& cfg, std::ostream& diag);

/// `compare` verb: each strategy under identical data and seeds. Per-strategy
/// outputs go to output_dir/<strategy>/; the table to output_dir/comparison.csv.
/// A failing strategy gets an error row; the others still run.
std::vector<SettingSummary> compare_cmd(const ExperimentConfig& cfg,
                                        std::span<const Strategy> strategies, std::ostream& diag);

enum class AblationAxis { update_signal, quartile_range, eta };

std::string_view to_string(AblationAxis axis);

/// `ablate` verb: sweeps one axis and writes output_dir/ablation_<axis>.csv.
std::vector<SettingSummary> ablation_cmd(AblationAxis axis, const ExperimentConfig& cfg,
                                         std::ostream& diag);

/// Split-search replay: the logged split instances of `runs`.
std::vector<std::vector<ClientSummary>> split_instances(std::span<const SeedRun> runs);

/// Median (over `repeats`) wall time in ms of one pass of the split-index
/// search over every instance, under `options`.
double time_split_search(std::span<const std::vector<ClientSummary>> instances,
                         const SplitOptions& options, int repeats = 20);

inline constexpr const char* kSummaryHeader =
    "label,n_seeds,mean_final_accuracy,stddev_final_accuracy,client_trainings,status";
inline constexpr const char* kAblationHeader =
    "setting,n_seeds,mean_final_accuracy,stddev_final_accuracy,client_trainings,train_ms,"
    "split_search_ms,status";

void write_summary_csv(std::ostream& out, std::span<const SettingSummary> rows);
void write_ablation_csv(std::ostream& out, std::span<const SettingSummary> rows);

/// Pretty-prints a splits CSV as an aligned table.
void inspect_splits(std::istream& in, std::ostream& out);

}  // namespace fedsplit
