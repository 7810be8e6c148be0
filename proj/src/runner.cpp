#include "fedsplit/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "fedsplit/errors.hpp"

namespace fedsplit {

namespace fs = std::filesystem;

namespace {
// Keeps the timed search from being optimised away.
volatile std::size_t g_search_sink = 0;
}  // namespace

SettingSummary summarize(std::string label, std::span<const SeedRun> runs) {
  SettingSummary s;
  s.label = std::move(label);
  s.n_seeds = runs.size();
  std::vector<double> acc;
  for (const auto& run : runs) {
    acc.push_back(run.result.log.final_accuracy().value_or(0.0));
    s.client_trainings += run.result.log.total_client_trainings;
    for (const auto& r : run.result.log.rounds) {
      s.train_ms += r.train_ms;
    }
  }
  if (!acc.empty()) {
    double sum = 0.0;
    for (double a : acc) {
      sum += a;
    }
    s.mean_accuracy = sum / static_cast<double>(acc.size());
    if (acc.size() > 1) {
      double sq = 0.0;
      for (double a : acc) {
        sq += (a - s.mean_accuracy) * (a - s.mean_accuracy);
      }
      s.stddev_accuracy = std::sqrt(sq / static_cast<double>(acc.size() - 1));
    }
  }
  return s;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  return out;
}

void write_checkpoint(const fs::path& path, const ModelParams& params) {
  auto out = open_out(path);
  const auto bytes = serialize_params(params);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<SeedRun> run_seeds(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : cfg.seeds) {
    Federation::RoundCallback on_round;
    if (cfg.checkpoint_every > 0) {
      on_round = [&, seed](int round, const ModelParams& global) {
        if ((round + 1) % cfg.checkpoint_every == 0) {
          write_checkpoint(dir / fmt::format("checkpoint_{}_round{}.bin", seed, round + 1), global);
        }
      };
    }
    {
      auto out = open_out(dir / fmt::format("partition_{}.csv", seed));
      write_partition_summary(out, build_clients(cfg.data, seed));
    }
    SeedRun run{seed, run_experiment(cfg, seed, on_round)};
    {
      auto out = open_out(dir / fmt::format("metrics_{}.csv", seed));
      write_metrics_csv(out, run.result.log);
    }
    {
      auto out = open_out(dir / fmt::format("splits_{}.csv", seed));
      write_splits_csv(out, run.result.log);
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

void write_summary_csv(std::ostream& out, std::span<const SettingSummary> rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{}\n", r.label, r.n_seeds, format_real(r.mean_accuracy),
                       format_real(r.stddev_accuracy), r.client_trainings,
                       r.error.empty() ? "ok" : "error");
  }
}

void write_ablation_csv(std::ostream& out, std::span<const SettingSummary> rows) {
  out << kAblationHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{},{},{},{}\n", r.label, r.n_seeds,
                       format_real(r.mean_accuracy), format_real(r.stddev_accuracy),
                       r.client_trainings, format_real(r.train_ms),
                       format_real(r.split_search_ms), r.error.empty() ? "ok" : "error");
  }
}

int run_cmd(const ExperimentConfig& cfg, std::ostream& diag) {
  const fs::path dir(cfg.output_dir);
  try {
    const auto runs = run_seeds(cfg, dir);
    const SettingSummary row = summarize(std::string(to_string(cfg.strategy)), runs);
    auto out = open_out(dir / "summary.csv");
    write_summary_csv(out, std::span(&row, 1));
    diag << fmt::format("{}: mean final accuracy {} (sd {}) over {} seed(s)\n", row.label,
                        format_real(row.mean_accuracy), format_real(row.stddev_accuracy),
                        row.n_seeds);
    return 0;
  } catch (const std::exception& e) {
    diag << "run failed: " << e.what() << '\n';
    return 1;
  }
}

std::vector<SettingSummary> compare_cmd(const ExperimentConfig& cfg,
                                        std::span<const Strategy> strategies, std::ostream& diag) {
  if (strategies.empty()) {
    throw InvalidArgument("compare: no strategies given");
  }
  const fs::path dir(cfg.output_dir);
  std::vector<SettingSummary> rows;
  for (Strategy strategy : strategies) {
    ExperimentConfig c = cfg;
    c.strategy = strategy;
    const std::string label(to_string(strategy));
    try {
      if (auto problems = validate(c); !problems.empty()) {
        throw ValidationError(std::move(problems));
      }
      const auto runs = run_seeds(c, dir / label);
      rows.push_back(summarize(label, runs));
    } catch (const std::exception& e) {
      SettingSummary failed;
      failed.label = label;
      failed.error = e.what();
      diag << label << " failed: " << e.what() << '\n';
      rows.push_back(std::move(failed));
    }
  }
  fs::create_directories(dir);
  auto out = open_out(dir / "comparison.csv");
  write_summary_csv(out, rows);
  for (const auto& r : rows) {
    if (r.error.empty()) {
      diag << fmt::format("{:<10} {:.4f} +- {:.4f}  trainings={}\n", r.label, r.mean_accuracy,
                          r.stddev_accuracy, r.client_trainings);
    }
  }
  return rows;
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::update_signal: return "update_signal";
    case AblationAxis::quartile_range: return "quartile_range";
    case AblationAxis::eta: return "eta";
  }
  return "?";
}

std::vector<std::vector<ClientSummary>> split_instances(std::span<const SeedRun> runs) {
  std::vector<std::vector<ClientSummary>> out;
  for (const auto& run : runs) {
    for (const auto& it : run.result.log.iterations) {
      if (!it.split) {
        continue;
      }
      std::vector<ClientSummary> inst;
      for (std::size_t i = 0; i < it.split->sorted_ids.size(); ++i) {
        inst.push_back({it.split->sorted_ids[i], it.split->sorted_magnitudes[i],
                        it.split->sorted_sizes[i], 0.0});
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

double time_split_search(std::span<const std::vector<ClientSummary>> instances,
                         const SplitOptions& options, int repeats) {
  struct Prepared {
    std::vector<double> values;
    std::vector<std::int64_t> sizes;
    std::size_t lo;
    std::size_t hi;
  };
  std::vector<Prepared> prepared;
  for (const auto& inst : instances) {
    if (inst.size() < 2) {
      continue;
    }
    const auto sorted = sort_by_magnitude(inst);
    Prepared p;
    for (const auto& s : sorted) {
      p.values.push_back(s.magnitude);
      p.sizes.push_back(s.size);
    }
    const auto q = iqr_indices(running_sums(sorted));
    std::tie(p.lo, p.hi) = search_bounds(options.range, sorted.size(), q);
    prepared.push_back(std::move(p));
  }
  if (prepared.empty()) {
    return 0.0;
  }
  // Each timed sample replays the sequence enough times to clear clock noise.
  constexpr int kPassesPerSample = 200;
  std::vector<double> samples;
  std::size_t sink = 0;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int pass = 0; pass < kPassesPerSample; ++pass) {
      for (const auto& p : prepared) {
        sink += optimal_split_index(p.values, p.sizes, p.lo, p.hi, options.weighting).value_or(0);
      }
    }
    samples.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
        kPassesPerSample);
  }
  std::sort(samples.begin(), samples.end());
  g_search_sink = sink;
  return samples[samples.size() / 2];
}

std::vector<SettingSummary> ablation_cmd(AblationAxis axis, const ExperimentConfig& cfg,
                                         std::ostream& diag) {
  struct Setting {
    std::string label;
    ExperimentConfig cfg;
  };
  std::vector<Setting> settings;
  ExperimentConfig base = cfg;
  base.strategy = Strategy::terraform;
  switch (axis) {
    case AblationAxis::update_signal:
      for (auto s : {UpdateSignal::gradient, UpdateSignal::loss, UpdateSignal::bias,
                     UpdateSignal::weight}) {
        Setting st{std::string(to_string(s)), base};
        st.cfg.update_signal = s;
        settings.push_back(std::move(st));
      }
      break;
    case AblationAxis::quartile_range:
      for (auto q : {QuartileRange::q1_q3, QuartileRange::full, QuartileRange::zero_q3,
                     QuartileRange::q1_end}) {
        Setting st{std::string(to_string(q)), base};
        st.cfg.quartile_range = q;
        settings.push_back(std::move(st));
      }
      break;
    case AblationAxis::eta:
      for (int eta : {2, 3, 4}) {
        Setting st{fmt::format("eta={}", eta), base};
        st.cfg.eta = eta;
        settings.push_back(std::move(st));
      }
      break;
  }

  const fs::path dir(cfg.output_dir);
  std::vector<SettingSummary> rows;
  std::vector<std::vector<SeedRun>> all_runs;
  for (const auto& st : settings) {
    try {
      auto runs = run_seeds(st.cfg, dir / fmt::format("{}_{}", to_string(axis), st.label));
      rows.push_back(summarize(st.label, runs));
      all_runs.push_back(std::move(runs));
    } catch (const std::exception& e) {
      SettingSummary failed;
      failed.label = st.label;
      failed.error = e.what();
      diag << st.label << " failed: " << e.what() << '\n';
      rows.push_back(std::move(failed));
      all_runs.emplace_back();
    }
  }

  if (axis == AblationAxis::quartile_range) {
    // Same instance sequence for every range: everything the sweep logged.
    std::vector<std::vector<ClientSummary>> instances;
    for (const auto& runs : all_runs) {
      auto more = split_instances(runs);
      instances.insert(instances.end(), more.begin(), more.end());
    }
    for (std::size_t i = 0; i < settings.size(); ++i) {
      rows[i].split_search_ms = time_split_search(instances, settings[i].cfg.split_options());
    }
  } else {
    for (std::size_t i = 0; i < settings.size(); ++i) {
      rows[i].split_search_ms =
          time_split_search(split_instances(all_runs[i]), settings[i].cfg.split_options());
    }
  }

  fs::create_directories(dir);
  auto out = open_out(dir / fmt::format("ablation_{}.csv", to_string(axis)));
  write_ablation_csv(out, rows);
  for (const auto& r : rows) {
    if (r.error.empty()) {
      diag << fmt::format("{:<10} {:.4f} +- {:.4f}  trainings={} split_search_ms={}\n", r.label,
                          r.mean_accuracy, r.stddev_accuracy, r.client_trainings,
                          format_real(r.split_search_ms));
    }
  }
  return rows;
}

void inspect_splits(std::istream& in, std::ostream& out) {
  std::vector<std::vector<std::string>> table;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
      cells.emplace_back();
    }
    table.push_back(std::move(cells));
  }
  if (table.empty()) {
    throw InvalidArgument("inspect: empty splits file");
  }
  std::vector<std::size_t> widths;
  for (const auto& row : table) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  for (const auto& row : table) {
    std::string text;
    for (std::size_t c = 0; c < row.size(); ++c) {
      text += fmt::format("{:<{}}", row[c], widths[c]);
      if (c + 1 < row.size()) {
        text += "  ";
      }
    }
    while (!text.empty() && text.back() == ' ') {
      text.pop_back();
    }
    out << text << '\n';
  }
}

}  // namespace fedsplit
