#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedsplit/model.hpp"
#include "fedsplit/selection.hpp"

namespace fedsplit {

enum class Strategy { random, poc, oort, terraform };
enum class UpdateSignal { gradient, loss, bias, weight };
enum class FlAlgorithm { fedavg, fedprox };

struct DataConfig {
  int n_clients = 50;
  std::vector<double> alpha_list{0.001, 0.01, 0.1, 0.5, 1.0};
  int n_classes = 10;
  int dim = 20;
  int n_samples = 10000;
  double class_separation = 4.0;
  double noise_std = kDefaultNoiseStd;
  double train_fraction = 0.8;
};

struct ExperimentConfig {
  int rounds = 100;
  int max_iterations = 5;
  int clients_per_round = 10;
  int eta = 4;
  Strategy strategy = Strategy::terraform;
  UpdateSignal update_signal = UpdateSignal::gradient;
  QuartileRange quartile_range = QuartileRange::q1_q3;
  bool count_weighted_clusters = false;
  bool eval_participants_only = false;

  FlAlgorithm fl_algorithm = FlAlgorithm::fedavg;
  double mu = 0.1;
  /// 0 means "derive": d = min(2K, n_clients), m = K.
  int poc_d = 0;
  int poc_m = 0;
  double oort_epsilon = 0.2;

  /// mu and seed inside are filled per run; the rest are local-training knobs.
  TrainConfig train;
  int hidden_units = 0;

  DataConfig data;

  std::vector<std::uint64_t> seeds{1, 2, 3};
  int workers = 1;
  int checkpoint_every = 0;
  std::string output_dir = "out";

  std::size_t resolved_poc_d() const;
  std::size_t resolved_poc_m() const;
  double effective_mu() const { return fl_algorithm == FlAlgorithm::fedprox ? mu : 0.0; }
  SplitOptions split_options() const;
};

std::string_view to_string(Strategy s);
std::string_view to_string(UpdateSignal s);
std::string_view to_string(QuartileRange r);
std::string_view to_string(FlAlgorithm a);
std::string_view to_string(Optimizer o);

/// Every problem with `cfg`, as "section.key: message" lines. Empty if valid.
std::vector<std::string> validate(const ExperimentConfig& cfg);

/// Environment variable that, when set, replaces output_dir.
inline constexpr const char* kOutputDirEnv = "FEDSPLIT_OUTPUT_DIR";

/// Parses the INI-style config text (see README for the grammar), applies the
/// output-dir env var, then `overrides` ("section.key", "value") on top, and
/// validates. Throws ParseError (with line) or ValidationError (all
/// violations at once).
ExperimentConfig parse_config(std::string_view text,
                              const std::vector<std::pair<std::string, std::string>>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Writes `cfg` back out in the same format.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace fedsplit
